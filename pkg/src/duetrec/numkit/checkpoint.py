"""Binary archive of named float64 tensors.

Layout: the line ``DUETCKPT v1\\n`` followed by entries sorted by name, each
``u32 name_len | name (utf-8) | u32 rank | u64 dims[rank] | f64 data`` with
every number little-endian.
"""
import struct

import numpy as np

MAGIC = b"DUETCKPT v1\n"


class CheckpointError(ValueError):
    pass


def dump_tensors(tensors):
    parts = [MAGIC]
    for name in sorted(tensors):
        arr = np.asarray(tensors[name], dtype="<f8")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def parse_tensors(blob):
    if not blob.startswith(MAGIC):
        header = blob.split(b"\n", 1)[0][:32]
        raise CheckpointError(f"bad checkpoint header {header!r}, expected {MAGIC.strip()!r}")
    pos = len(MAGIC)
    out = {}
    try:
        while pos < len(blob):
            (n,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            name = blob[pos:pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}Q", blob, pos)
            pos += 8 * rank
            count = int(np.prod(dims)) if rank else 1
            if pos + 8 * count > len(blob):
                raise CheckpointError(f"truncated data for tensor {name!r}")
            arr = np.frombuffer(blob, dtype="<f8", count=count, offset=pos).reshape(dims)
            pos += 8 * count
            out[name] = arr.astype(np.float64)
    except struct.error as exc:
        raise CheckpointError(f"truncated checkpoint: {exc}") from None
    return out


def save_tensors(path, tensors):
    with open(path, "wb") as fh:
        fh.write(dump_tensors(tensors))


def load_tensors(path):
    with open(path, "rb") as fh:
        return parse_tensors(fh.read())
