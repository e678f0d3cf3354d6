"""Interaction, item-text and triple ingestion plus preprocessing.

Raw inputs:

* ``interactions.tsv``: ``user_id \\t item_id \\t rating [\\t timestamp]``
* ``items.jsonl``: ``{"item_id": ..., "title": ..., "description": ...}``
* ``triples.tsv``: ``head_id \\t relation \\t tail_id``

A prepared dataset directory holds ``vocab.tsv``, ``items.bin``,
``train.tsv``, ``test.tsv``, ``triples.tsv`` and ``stats.json``.
"""
import json
import logging
import math
import os
import re
import struct
from collections import Counter, defaultdict
from dataclasses import dataclass, field

import numpy as np

from .seeding import stream

log = logging.getLogger(__name__)

PAD, UNK = 0, 1
TITLE_LEN = 16
DESC_CAP = 200
ITEMS_MAGIC = b"DUETITEMS v1\n"
_TOKEN = re.compile(r"[^\W_]+", re.UNICODE)


class ParseError(ValueError):
    def __init__(self, path, lineno, message):
        self.path, self.lineno = path, lineno
        super().__init__(f"{path}:{lineno}: {message}")


class LinkageError(KeyError):
    def __init__(self, ids):
        self.ids = sorted(ids)
        super().__init__(f"unresolvable ids: {', '.join(self.ids[:20])}")

    def __str__(self):
        return self.args[0]


@dataclass(frozen=True)
class RawInteraction:
    user_id: str
    item_id: str
    rating: float
    timestamp: int = None
    lineno: int = 0


@dataclass(frozen=True)
class SplitConfig:
    train_fraction: float = 0.8
    seed: int = 0
    kcore: int = 10
    positive_threshold: float = 3.0

    def __post_init__(self):
        if not 0 < self.train_fraction < 1:
            raise ValueError("train_fraction must lie in (0, 1)")
        if self.kcore < 0:
            raise ValueError("kcore must be >= 0")


def load_interactions(path):
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            cols = line.split("\t")
            if len(cols) not in (3, 4):
                raise ParseError(path, lineno, f"expected 3 or 4 tab-separated columns, got {len(cols)}")
            user, item = cols[0].strip(), cols[1].strip()
            if not user or not item:
                raise ParseError(path, lineno, "empty user or item id")
            try:
                rating = float(cols[2])
                ts = int(cols[3]) if len(cols) == 4 and cols[3].strip() else None
            except ValueError as exc:
                raise ParseError(path, lineno, str(exc)) from None
            if not math.isfinite(rating):
                raise ParseError(path, lineno, "rating is not finite")
            out.append(RawInteraction(user, item, rating, ts, lineno))
    return out


def load_item_texts(path):
    texts = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                texts[str(obj["item_id"])] = (obj.get("title") or "", obj.get("description") or "")
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ParseError(path, lineno, f"bad item record: {exc}") from None
    return texts


def load_triples(path):
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            cols = line.split("\t")
            if len(cols) != 3 or not all(c.strip() for c in cols):
                raise ParseError(path, lineno, "expected head \\t relation \\t tail")
            out.append(tuple(c.strip() for c in cols))
    return out


def binarize(raw, threshold=3.0):
    """Pairs rated at or above ``threshold``."""
    return {(r.user_id, r.item_id) for r in raw if r.rating >= threshold}


def kcore_filter(positives, k):
    """Largest sub-graph where every user and item keeps degree >= k."""
    pairs = set(positives)
    if k <= 0:
        return pairs
    users = defaultdict(set)
    items = defaultdict(set)
    for u, i in pairs:
        users[u].add(i)
        items[i].add(u)
    queue = [("u", u) for u, s in users.items() if len(s) < k]
    queue += [("i", i) for i, s in items.items() if len(s) < k]
    while queue:
        side, node = queue.pop()
        own, other = (users, items) if side == "u" else (items, users)
        if node not in own:
            continue
        for nb in own.pop(node):
            peers = other[nb]
            peers.discard(node)
            if len(peers) == k - 1:
                queue.append(("i" if side == "u" else "u", nb))
    return {(u, i) for u, s in users.items() for i in s}


def split(examples, cfg):
    """Seeded shuffle, then the first floor(fraction * n) go to train."""
    if not examples:
        raise ValueError("cannot split an empty example list")
    rng = stream(cfg.seed, "data-split")
    order = rng.permutation(len(examples))
    cut = int(math.floor(cfg.train_fraction * len(examples)))
    train = [examples[j] for j in order[:cut]]
    test = [examples[j] for j in order[cut:]]
    return train, test


def tokenize(text):
    return _TOKEN.findall(text.lower())


def build_vocab(texts, min_count=2):
    counts = Counter(tok for t in texts for tok in tokenize(t))
    kept = sorted((w for w, c in counts.items() if c >= min_count), key=lambda w: (-counts[w], w))
    vocab = {"<pad>": PAD, "<unk>": UNK}
    for w in kept:
        vocab[w] = len(vocab)
    return vocab


def encode_text(text, vocab, length):
    if length < 1:
        raise ValueError("length must be >= 1")
    ids = [vocab.get(tok, UNK) for tok in tokenize(text)][:length]
    return ids + [PAD] * (length - len(ids))


def sample_negatives(positives, users, items, ratio=1, seed=0, pairs=None, avoid=()):
    """Label-1 rows for ``pairs`` (default: all positives) plus ``ratio`` negatives each.

    Negatives are drawn uniformly from items the user has no positive with,
    skipping any pair in ``avoid``. Returns ``(examples, skipped_users)`` where skipped users had no unobserved
    item left.
    """
    if ratio < 1:
        raise ValueError("ratio must be >= 1")
    items = list(items)
    n_items = len(items)
    seen = defaultdict(set)
    for u, i in positives:
        seen[u].add(i)
    rng = stream(seed, "negatives")
    out = []
    skipped = set()
    for u, i in sorted(pairs if pairs is not None else positives):
        out.append((u, i, 1))
        if len(seen[u]) >= n_items:
            skipped.add(u)
            continue
        for _ in range(ratio):
            for _attempt in range(100):
                j = items[rng.integers(n_items)]
                if j not in seen[u] and (u, j) not in avoid:
                    out.append((u, j, 0))
                    break
    if skipped:
        log.warning("%d users interacted with every item; their negatives were skipped", len(skipped))
    return out, len(skipped)


@dataclass
class Dataset:
    """Prepared data with dense indices.

    ``title_ids`` is ``[n_items, TITLE_LEN]`` and ``desc_ids`` ``[n_items,
    DESC_CAP]``; models cut descriptions to their own length.
    """

    users: dict
    items: dict
    vocab: dict
    train: list
    test: list
    title_ids: np.ndarray
    desc_ids: np.ndarray
    triples: list = field(default_factory=list)
    recency: dict = field(default_factory=dict)
    stats: dict = field(default_factory=dict)

    @property
    def positives(self):
        return {(u, i) for u, i, y in self.train + self.test if y == 1}

    @property
    def train_positives(self):
        return {(u, i) for u, i, y in self.train if y == 1}

    def user_index(self, user_id):
        try:
            return self.users[user_id]
        except KeyError:
            raise KeyError(f"unknown user id {user_id!r}") from None

    def item_index(self, item_id):
        try:
            return self.items[item_id]
        except KeyError:
            raise KeyError(f"unknown item id {item_id!r}") from None

    def histories(self):
        """Train-positive item indices per user index, oldest first."""
        out = defaultdict(list)
        for u, i, y in self.train:
            if y == 1:
                out[self.users[u]].append((self.recency.get((u, i), 0), self.items[i]))
        return {u: [i for _, i in sorted(rows)] for u, rows in out.items()}

    def indexed(self, rows):
        u = np.array([self.users[r[0]] for r in rows], dtype=np.int64)
        i = np.array([self.items[r[1]] for r in rows], dtype=np.int64)
        y = np.array([r[2] for r in rows], dtype=np.float64)
        return u, i, y


def prepare(interactions, item_texts, triples, cfg=SplitConfig(), neg_ratio=1, min_count=2):
    """Raw records to a :class:`Dataset`, following the preprocessing rules."""
    positives = kcore_filter(binarize(interactions, cfg.positive_threshold), cfg.kcore)
    if not positives:
        raise ValueError("no interactions left after binarisation and k-core filtering")
    recency = {}
    for r in interactions:
        key = (r.user_id, r.item_id)
        if key in positives:
            rank = (r.timestamp if r.timestamp is not None else -1, r.lineno)
            recency[key] = max(recency.get(key, rank), rank)
    order = {k: n for n, k in enumerate(sorted(recency, key=recency.get))}

    user_ids = sorted({u for u, _ in positives})
    item_ids = sorted({i for _, i in positives})
    train_pos, test_pos = split(sorted(positives), cfg)
    train, _ = sample_negatives(positives, user_ids, item_ids, neg_ratio, cfg.seed, pairs=train_pos)
    # a pair never appears in both splits, negatives included
    test, _ = sample_negatives(positives, user_ids, item_ids, neg_ratio, cfg.seed + 1, pairs=test_pos,
                               avoid={(u, i) for u, i, _ in train})

    corpus = []
    for i in item_ids:
        corpus.extend(item_texts.get(i, ("", "")))
    vocab = build_vocab(corpus, min_count)
    titles = np.array([encode_text(item_texts.get(i, ("", ""))[0], vocab, TITLE_LEN) for i in item_ids],
                      dtype=np.int64).reshape(len(item_ids), TITLE_LEN)
    descs = np.array([encode_text(item_texts.get(i, ("", ""))[1], vocab, DESC_CAP) for i in item_ids],
                     dtype=np.int64).reshape(len(item_ids), DESC_CAP)

    known = {r.item_id for r in interactions}
    dangling = {x for h, _, t in triples if h not in known and t not in known for x in (h, t)}
    if dangling:
        raise LinkageError(dangling)
    item_set = set(item_ids)
    # triples of items dropped by k-core go with them
    kept_triples = [t for t in triples if t[0] in item_set or t[2] in item_set]
    ds = Dataset(
        users={u: n for n, u in enumerate(user_ids)},
        items={i: n for n, i in enumerate(item_ids)},
        vocab=vocab, train=train, test=test, title_ids=titles, desc_ids=descs,
        triples=kept_triples, recency=order,
    )
    ds.stats = dataset_stats(ds)
    return ds


def dataset_stats(ds):
    entities = {h for h, _, _ in ds.triples} | {t for _, _, t in ds.triples}
    return {
        "users": len(ds.users),
        "items": len(ds.items),
        "interactions": len(ds.positives),
        "train_examples": len(ds.train),
        "test_examples": len(ds.test),
        "vocab": len(ds.vocab),
        "kg_entities": len(entities),
        "kg_relations": len({r for _, r, _ in ds.triples}),
        "kg_triples": len(ds.triples),
    }


def _write_items_bin(path, item_ids, titles, descs):
    with open(path, "wb") as fh:
        fh.write(ITEMS_MAGIC)
        fh.write(struct.pack("<III", len(item_ids), titles.shape[1], descs.shape[1]))
        for iid in item_ids:
            raw = iid.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
        fh.write(np.ascontiguousarray(titles, dtype="<i4").tobytes())
        fh.write(np.ascontiguousarray(descs, dtype="<i4").tobytes())


def _read_items_bin(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(ITEMS_MAGIC):
        raise ValueError(f"{path}: bad header")
    pos = len(ITEMS_MAGIC)
    n, tlen, dlen = struct.unpack_from("<III", blob, pos)
    pos += 12
    ids = []
    for _ in range(n):
        (k,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        ids.append(blob[pos:pos + k].decode("utf-8"))
        pos += k
    titles = np.frombuffer(blob, dtype="<i4", count=n * tlen, offset=pos).reshape(n, tlen)
    pos += 4 * n * tlen
    descs = np.frombuffer(blob, dtype="<i4", count=n * dlen, offset=pos).reshape(n, dlen)
    return ids, titles.astype(np.int64), descs.astype(np.int64)


def save_dataset(ds, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "vocab.tsv"), "w", encoding="utf-8") as fh:
        for w, n in ds.vocab.items():
            fh.write(f"{w}\t{n}\n")
    item_ids = sorted(ds.items, key=ds.items.get)
    _write_items_bin(os.path.join(out_dir, "items.bin"), item_ids, ds.title_ids, ds.desc_ids)
    for name, rows in (("train.tsv", ds.train), ("test.tsv", ds.test)):
        with open(os.path.join(out_dir, name), "w", encoding="utf-8") as fh:
            for u, i, y in rows:
                rank = ds.recency.get((u, i), -1) if y == 1 else -1
                fh.write(f"{u}\t{i}\t{y}\t{rank}\n")
    with open(os.path.join(out_dir, "triples.tsv"), "w", encoding="utf-8") as fh:
        for h, r, t in ds.triples:
            fh.write(f"{h}\t{r}\t{t}\n")
    with open(os.path.join(out_dir, "stats.json"), "w", encoding="utf-8") as fh:
        json.dump(ds.stats, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_dataset(data_dir):
    vocab = {}
    with open(os.path.join(data_dir, "vocab.tsv"), encoding="utf-8") as fh:
        for line in fh:
            w, n = line.rstrip("\n").split("\t")
            vocab[w] = int(n)
    item_ids, titles, descs = _read_items_bin(os.path.join(data_dir, "items.bin"))
    recency = {}
    parts = {}
    for name in ("train.tsv", "test.tsv"):
        rows = []
        with open(os.path.join(data_dir, name), encoding="utf-8") as fh:
            for line in fh:
                u, i, y, rank = line.rstrip("\n").split("\t")
                rows.append((u, i, int(y)))
                if int(rank) >= 0:
                    recency[(u, i)] = int(rank)
        parts[name] = rows
    user_ids = sorted({u for u, _, _ in parts["train.tsv"] + parts["test.tsv"]})
    triples = load_triples(os.path.join(data_dir, "triples.tsv"))
    with open(os.path.join(data_dir, "stats.json"), encoding="utf-8") as fh:
        stats = json.load(fh)
    return Dataset(
        users={u: n for n, u in enumerate(user_ids)},
        items={i: n for n, i in enumerate(item_ids)},
        vocab=vocab, train=parts["train.tsv"], test=parts["test.tsv"],
        title_ids=titles, desc_ids=descs, triples=triples, recency=recency, stats=stats,
    )


def fit_length(ids, length):
    """Truncate or right-pad the columns of an id matrix to ``length``."""
    if ids.shape[1] >= length:
        return ids[:, :length]
    return np.pad(ids, ((0, 0), (0, length - ids.shape[1])))
