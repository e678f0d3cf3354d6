"""Named random streams derived from one 64-bit seed."""
import zlib

import numpy as np

STREAMS = ("data-split", "negatives", "init", "neighbor-sampling", "synth", "kg-corrupt", "batch-order")


def stream(seed, name, *keys):
    """Independent generator for ``(seed, name, *keys)``.

    Streams with different names or keys never share state, so adding draws to
    one component does not shift another.
    """
    words = [int(seed) & 0xFFFFFFFF, (int(seed) >> 32) & 0xFFFFFFFF, zlib.crc32(name.encode())]
    words.extend(int(k) & 0xFFFFFFFF for k in keys)
    return np.random.default_rng(np.random.SeedSequence(words))
