"""Graph-side model over the unified relation graph (KG triples plus user-item edges).

Entity embeddings are shaped by a TransR margin objective and read out through
one hop of attention-weighted neighbour aggregation followed by a concat
aggregator. Users occupy entity indices ``[0, n_users)``, items
``[n_users, n_users + n_items)``, remaining KG entities follow.
"""
from dataclasses import dataclass

import numpy as np

from . import numkit as nk
from .dataio import LinkageError
from .numkit import ParamSpec
from .seeding import stream

INTERACT = "Interact"


class SamplingError(RuntimeError):
    pass


@dataclass
class UnifiedRelationGraph:
    n_users: int
    n_items: int
    entity_ids: list
    relations: list
    triples: np.ndarray  # [n, 3] of (head, relation, tail)
    offsets: np.ndarray  # CSR over entities
    nbr_rel: np.ndarray
    nbr_ent: np.ndarray

    def __post_init__(self):
        self._keys = set(self.encode(self.triples).tolist())

    @property
    def n_entities(self):
        return len(self.entity_ids)

    @property
    def n_relations(self):
        return len(self.relations)

    def encode(self, triples):
        t = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
        return (t[:, 0] * self.n_relations + t[:, 1]) * self.n_entities + t[:, 2]

    def contains(self, triple):
        return int(self.encode(triple)[0]) in self._keys

    def user_entity(self, u):
        return np.asarray(u) + 0

    def item_entity(self, i):
        return np.asarray(i) + self.n_users

    def neighbors(self, e):
        lo, hi = self.offsets[e], self.offsets[e + 1]
        return self.nbr_rel[lo:hi], self.nbr_ent[lo:hi]

    def degree(self, e):
        return int(self.offsets[e + 1] - self.offsets[e])


def build_urg(dataset, kg_triples=None):
    """Merge KG triples with one ``Interact`` triple per train positive."""
    kg_triples = dataset.triples if kg_triples is None else kg_triples
    users = sorted(dataset.users, key=dataset.users.get)
    items = sorted(dataset.items, key=dataset.items.get)
    unlinked = {x for h, _, t in kg_triples if h not in dataset.items and t not in dataset.items for x in (h, t)}
    if unlinked:
        raise LinkageError(unlinked)
    extra = sorted({x for h, _, t in kg_triples for x in (h, t)} - set(dataset.items))
    entity_ids = [("user", u) for u in users] + [("item", i) for i in items] + [("entity", e) for e in extra]
    index = {("item", i): n + len(users) for n, i in enumerate(items)}
    index.update({("entity", e): n + len(users) + len(items) for n, e in enumerate(extra)})

    def ent(x):
        return index[("item", x)] if x in dataset.items else index[("entity", x)]

    relations = [INTERACT] + sorted({r for _, r, _ in kg_triples})
    rel_index = {r: n for n, r in enumerate(relations)}
    rows = [(ent(h), rel_index[r], ent(t)) for h, r, t in kg_triples]
    rows += [(dataset.users[u], 0, len(users) + dataset.items[i]) for u, i in sorted(dataset.train_positives)]
    triples = np.array(sorted(set(rows)), dtype=np.int64).reshape(-1, 3)

    n_ent = len(entity_ids)
    heads = np.concatenate([triples[:, 0], triples[:, 2]])
    tails = np.concatenate([triples[:, 2], triples[:, 0]])
    rels = np.concatenate([triples[:, 1], triples[:, 1]])
    order = np.lexsort((tails, rels, heads))
    counts = np.bincount(heads, minlength=n_ent)
    offsets = np.concatenate([[0], np.cumsum(counts)])
    return UnifiedRelationGraph(len(users), len(items), entity_ids, relations, triples,
                                offsets, rels[order], tails[order])


def global_param_specs(n_entities, n_relations, dim=50, attn_hidden=None):
    attn_hidden = attn_hidden or dim
    return {
        "global.ent_emb": ParamSpec((n_entities, dim), "embedding"),
        "global.rel_emb": ParamSpec((n_relations, dim), "embedding"),
        "global.proj.M": ParamSpec((n_relations, dim, dim)),
        "global.attn.W5": ParamSpec((2 * dim, attn_hidden)),
        "global.attn.b1": ParamSpec((attn_hidden,), "bias"),
        "global.attn.W4": ParamSpec((attn_hidden, 1)),
        "global.attn.b2": ParamSpec((1,), "bias"),
        "global.agg.W3": ParamSpec((dim, dim)),
        "global.agg.b": ParamSpec((dim,), "bias"),
        "global.agg.W6": ParamSpec((2 * dim, dim)),
        "global.agg.null": ParamSpec((1, dim), "embedding"),
        "global.head.W1": ParamSpec((2 * dim, dim)),
        "global.head.b1": ParamSpec((dim,), "bias"),
        "global.head.W2": ParamSpec((dim, 1)),
        "global.head.b2": ParamSpec((1,), "bias"),
    }


KG_PARAMS = ("global.ent_emb", "global.rel_emb", "global.proj.M")


def transr_score(triples, store):
    """``||e_h M_r + e_r - e_t M_r||^2`` per triple row."""
    t = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    E = store.param("global.ent_emb")
    M = nk.take(store.param("global.proj.M"), t[:, 1])
    head = nk.einsum("nk,nkj->nj", nk.take(E, t[:, 0]), M)
    tail = nk.einsum("nk,nkj->nj", nk.take(E, t[:, 2]), M)
    diff = head + nk.take(store.param("global.rel_emb"), t[:, 1]) - tail
    return nk.reduce_sum(diff * diff, axis=-1)


def kg_margin_loss(true_triples, corrupted, gamma, store):
    if gamma <= 0:
        raise ValueError("margin must be positive")
    gap = transr_score(true_triples, store) + gamma - transr_score(corrupted, store)
    return nk.reduce_sum(nk.leaky_relu(gap, 0.0))


def _as_rng(seed):
    return seed if isinstance(seed, np.random.Generator) else stream(seed, "kg-corrupt")


def corrupt_triple(triple, urg, seed=0, max_tries=100):
    """Swap head or tail (fair coin) for a uniform entity, avoiding true triples."""
    rng = _as_rng(seed)
    h, r, t = (int(x) for x in triple)
    if urg.n_entities < 2:
        raise SamplingError("need at least two entities to corrupt a triple")
    for _ in range(max_tries):
        e = int(rng.integers(urg.n_entities))
        cand = (e, r, t) if rng.random() < 0.5 else (h, r, e)
        if not urg.contains(cand):
            return cand
    raise SamplingError(f"no corruption of {(h, r, t)} found in {max_tries} tries")


def corrupt_batch(triples, urg, rng, max_tries=100):
    """Vectorised :func:`corrupt_triple` over a ``[n, 3]`` array."""
    out = np.array(triples, dtype=np.int64).reshape(-1, 3)
    src = out.copy()
    todo = np.arange(len(out))
    for _ in range(max_tries):
        if not len(todo):
            return out
        ents = rng.integers(urg.n_entities, size=len(todo))
        head_side = rng.random(len(todo)) < 0.5
        cand = src[todo].copy()
        cand[head_side, 0] = ents[head_side]
        cand[~head_side, 2] = ents[~head_side]
        out[todo] = cand
        keys = urg.encode(cand)
        todo = todo[np.fromiter((int(k) in urg._keys for k in keys), bool, len(keys))]
    if len(todo):
        raise SamplingError(f"{len(todo)} triples could not be corrupted in {max_tries} tries")
    return out


def clip_kg_params(store):
    """Keep entity rows in the unit ball and every projection non-expansive.

    Together these bound each projected embedding ``e M_r`` by 1. Relation
    rows stay free, otherwise a self-loop corruption scores at most 1 and a
    unit margin could never be met.
    """
    v = store["global.ent_emb"]
    store["global.ent_emb"] = v / np.maximum(np.linalg.norm(v, axis=1, keepdims=True), 1.0)
    M = store["global.proj.M"]
    spec = np.linalg.norm(M, ord=2, axis=(1, 2))
    store["global.proj.M"] = M / np.maximum(spec, 1.0)[:, None, None]


def sample_neighbors(urg, entities, sample_size, rng=None, exclude=None, seed=None):
    """Padded neighbour index matrix and mask for a batch of entities.

    Entities with at most ``sample_size`` neighbours keep all of them; larger
    neighbourhoods are subsampled without replacement, either from ``rng`` or,
    when ``seed`` is given, from a stream keyed by the entity so the result
    does not depend on the batch. ``exclude[b]`` removes that entity from row
    b. Rows left empty point at the null neighbour (index ``n_entities``).
    """
    entities = np.asarray(entities, dtype=np.int64)
    rows = []
    for b, e in enumerate(entities):
        _, nbrs = urg.neighbors(e)
        if exclude is not None:
            nbrs = nbrs[nbrs != exclude[b]]
        if len(nbrs) > sample_size:
            gen = rng if seed is None else stream(seed, "neighbor-sampling", e)
            nbrs = np.sort(gen.choice(nbrs, sample_size, replace=False))
        rows.append(nbrs)
    width = max(1, max((len(r) for r in rows), default=1))
    idx = np.full((len(rows), width), urg.n_entities, dtype=np.int64)
    mask = np.zeros((len(rows), width), dtype=bool)
    for b, r in enumerate(rows):
        if len(r):
            idx[b, :len(r)] = r
            mask[b, :len(r)] = True
        else:
            mask[b, 0] = True
    return idx, mask


def _entity_table(store):
    return nk.concat([store.param("global.ent_emb"), store.param("global.agg.null")], axis=0)


def attention_logits(head_emb, nbr_emb, store, slope=0.2):
    """Two-layer attention score for each (head, neighbour) pair; ``[..., slots]``."""
    pair = nk.concat([head_emb, nbr_emb], axis=-1)
    hidden = nk.leaky_relu(nk.affine(pair, store.param("global.attn.W5"), store.param("global.attn.b1")), slope)
    scores = nk.matmul(hidden, store.param("global.attn.W4"))
    return nk.reshape(scores, scores.shape[:-1]) + store.param("global.attn.b2")


def aggregate_neighbors(nbr_emb, pi, store, slope=0.2):
    """``LeakyReLU(W3 (sum_t pi_t e_t) + b)`` over the last-but-one axis."""
    pi = nk.as_tensor(pi)
    mixed = nk.reduce_sum(nk.as_tensor(nbr_emb) * nk.reshape(pi, pi.shape + (1,)), axis=-2)
    return nk.leaky_relu(nk.affine(mixed, store.param("global.agg.W3"), store.param("global.agg.b")), slope)


def concat_aggregate(self_emb, nbr_repr, store, slope=0.2):
    x = nk.concat([self_emb, nbr_repr], axis=-1)
    return nk.leaky_relu(nk.matmul(x, store.param("global.agg.W6")), slope)


def embed_entities(store, heads, nbr_idx, nbr_mask, slope=0.2):
    """One attention-aggregation hop for a batch; returns ``[batch, k]``.

    The attention input layer is split into its head and neighbour halves and
    applied to the gathered rows, which equals scoring the concatenation.
    """
    heads = np.asarray(heads, dtype=np.int64)
    table = _entity_table(store)
    k = table.shape[1]
    W5 = store.param("global.attn.W5")
    e_h = nk.take(store.param("global.ent_emb"), heads)
    e_t = nk.take(table, nbr_idx)
    head_part = nk.matmul(e_h, nk.slice_axis(W5, 0, k, axis=0)) + store.param("global.attn.b1")
    pre = nk.matmul(e_t, nk.slice_axis(W5, k, 2 * k, axis=0)) + nk.reshape(head_part, (len(heads), 1, -1))
    scores = nk.matmul(nk.leaky_relu(pre, slope), store.param("global.attn.W4"))
    logits = nk.reshape(scores, scores.shape[:-1]) + store.param("global.attn.b2")
    pi = nk.masked_softmax(logits, nbr_mask)
    return concat_aggregate(e_h, aggregate_neighbors(e_t, pi, store, slope), store, slope)


def attention_weights(head, neighbors, store, slope=0.2):
    """Softmax attention of ``head`` over a list of ``(relation, tail)`` neighbours.

    Relations are accepted for interface symmetry but do not enter the score.
    """
    tails = np.array([t for _, t in neighbors], dtype=np.int64)
    if not len(tails):
        raise ValueError("attention needs at least one neighbour")
    E = store.param("global.ent_emb")
    e_h = nk.take(E, np.full((1, len(tails)), head))
    e_t = nk.take(E, tails[None, :])
    logits = attention_logits(e_h, e_t, store, slope)
    return nk.reshape(nk.masked_softmax(logits, np.ones((1, len(tails)), bool)), (len(tails),))


def neighbor_aggregate(tails, pi, store, slope=0.2):
    e_t = nk.take(store.param("global.ent_emb"), np.asarray(tails, dtype=np.int64))
    return aggregate_neighbors(e_t, pi, store, slope)


def global_embed(entity, urg, store, sample_size=8, seed=0, exclude=None, slope=0.2):
    """Aggregated embedding of a single entity (vector of length k)."""
    excl = None if exclude is None else np.array([exclude])
    idx, mask = sample_neighbors(urg, [entity], sample_size, exclude=excl, seed=seed)
    return nk.reshape(embed_entities(store, [entity], idx, mask, slope), (-1,))


def global_head(user_repr, item_repr, store, slope=0.2):
    x = nk.concat([user_repr, item_repr], axis=-1)
    hidden = nk.leaky_relu(nk.affine(x, store.param("global.head.W1"), store.param("global.head.b1")), slope)
    z = nk.affine(hidden, store.param("global.head.W2"), store.param("global.head.b2"))
    return nk.reshape(z, z.shape[:-1])


def global_predict(user_repr, item_repr, store, slope=0.2):
    return nk.sigmoid(global_head(user_repr, item_repr, store, slope))


def global_forward(store, urg, users, items, sample_size, rng=None, seed=None, slope=0.2):
    """Batched global probabilities for (user index, item index) rows.

    The edge between the scored user and item is hidden from both
    neighbourhoods so a training pair never sees its own label.
    """
    ue = urg.user_entity(np.asarray(users, dtype=np.int64))
    ie = urg.item_entity(np.asarray(items, dtype=np.int64))
    u_idx, u_mask = sample_neighbors(urg, ue, sample_size, rng=rng, exclude=ie, seed=seed)
    i_idx, i_mask = sample_neighbors(urg, ie, sample_size, rng=rng, exclude=ue, seed=seed)
    u_repr = embed_entities(store, ue, u_idx, u_mask, slope)
    i_repr = embed_entities(store, ie, i_idx, i_mask, slope)
    return global_predict(u_repr, i_repr, store, slope)
