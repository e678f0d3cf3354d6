"""Text-side model: CNN item encoder, history attention and the local head.

Items are encoded from their title and description token ids by a shared
tri-gram CNN with max-pooling followed by a one-hidden-layer MLP. A user is
represented by an attention-weighted sum of their history item encodings,
where the attention logits depend on the candidate item.
"""
import numpy as np

from . import numkit as nk
from .dataio import PAD
from .numkit import ParamSpec


def local_param_specs(vocab_size, dim_word=128, n_filters=None, window=3, dim_local=None, hidden=None):
    n_filters = n_filters or dim_word
    dim_local = dim_local or dim_word
    hidden = hidden or dim_local
    return {
        "local.word_emb": ParamSpec((vocab_size, dim_word), "embedding"),
        "local.cnn.weight": ParamSpec((window * dim_word, n_filters)),
        "local.cnn.bias": ParamSpec((n_filters,), "bias"),
        "local.kee.W1": ParamSpec((2 * n_filters, hidden)),
        "local.kee.b1": ParamSpec((hidden,), "bias"),
        "local.kee.W2": ParamSpec((hidden, dim_local)),
        "local.kee.b2": ParamSpec((dim_local,), "bias"),
        "local.han.W1": ParamSpec((2 * dim_local, hidden)),
        "local.han.b1": ParamSpec((hidden,), "bias"),
        "local.han.W2": ParamSpec((hidden, 1)),
        "local.han.b2": ParamSpec((1,), "bias"),
        "local.head.W1": ParamSpec((2 * dim_local, dim_local)),
        "local.head.b1": ParamSpec((dim_local,), "bias"),
        "local.head.W2": ParamSpec((dim_local, 1)),
        "local.head.b2": ParamSpec((1,), "bias"),
        "local.default_user": ParamSpec((1, dim_local), "embedding"),
    }


def cnn_encode_many(token_mats, store):
    """Sentence vectors ``[n, filters]`` for each token id matrix ``[n, length]``.

    Every window of ``window`` consecutive word vectors goes through the filter
    bank and each filter keeps its maximum over positions. Since the filter map
    is linear in the window, each distinct token is projected once and window
    responses are sums of gathered rows. PAD tokens contribute zero whatever
    the PAD embedding row holds.
    """
    W = store.param("local.cnn.weight")
    dim = store["local.word_emb"].shape[1]
    window, n_filters = W.shape[0] // dim, W.shape[1]
    mats = []
    for tokens in token_mats:
        tokens = np.atleast_2d(np.asarray(tokens, dtype=np.int64))
        if tokens.shape[1] < window:
            tokens = np.pad(tokens, ((0, 0), (0, window - tokens.shape[1])), constant_values=PAD)
        mats.append(tokens)
    vocab, inverse = np.unique(np.concatenate([m.reshape(-1) for m in mats]), return_inverse=True)
    emb = nk.take(store.param("local.word_emb"), vocab) * (vocab != PAD)[:, None].astype(np.float64)
    # [window*dim, q] -> [dim, window*q] so one matmul projects every offset
    W_by_offset = nk.reshape(nk.transpose(nk.reshape(W, (window, dim, n_filters)), (1, 0, 2)),
                             (dim, window * n_filters))
    proj = nk.reshape(nk.matmul(emb, W_by_offset), (len(vocab) * window, n_filters))
    bias = store.param("local.cnn.bias")

    out, lo = [], 0
    for tokens in mats:
        pos = inverse[lo:lo + tokens.size].reshape(tokens.shape)
        lo += tokens.size
        n_pos = tokens.shape[1] - window + 1
        resp = bias
        for o in range(window):
            resp = resp + nk.take(proj, pos[:, o:o + n_pos] * window + o)
        out.append(nk.max_axis(resp, axis=1))
    return out


def cnn_encode(tokens, store):
    return cnn_encode_many([tokens], store)[0]


def kee_encode(title_tokens, desc_tokens, store, slope=0.2):
    """Item embeddings from the concatenated title and description vectors."""
    sent = nk.concat(cnn_encode_many([title_tokens, desc_tokens], store), axis=-1)
    hidden = nk.leaky_relu(nk.affine(sent, store.param("local.kee.W1"), store.param("local.kee.b1")), slope)
    return nk.affine(hidden, store.param("local.kee.W2"), store.param("local.kee.b2"))


def han_logits(history, candidate, store, slope=0.2):
    """Unnormalised attention ``[batch, slots]`` of each history item against the candidate.

    ``history`` is ``[batch, slots, d]`` and ``candidate`` ``[batch, slots, d]``
    (the candidate embedding repeated per slot).
    """
    pair = nk.concat([history, candidate], axis=-1)
    hidden = nk.leaky_relu(nk.affine(pair, store.param("local.han.W1"), store.param("local.han.b1")), slope)
    scores = nk.matmul(hidden, store.param("local.han.W2"))
    return nk.reshape(scores, scores.shape[:-1]) + store.param("local.han.b2")


def han_weights(history_embs, candidate_emb, store, mask=None, slope=0.2):
    """Softmax attention over one user's history; masked slots get weight 0."""
    hist = nk.as_tensor(history_embs)
    cand = nk.as_tensor(candidate_emb)
    n = hist.shape[0]
    if mask is None:
        mask = np.ones(n, dtype=bool)
    if not np.any(mask):
        raise ValueError("attention needs at least one unmasked history item")
    h3 = nk.reshape(hist, (1,) + hist.shape)
    c3 = nk.take(nk.reshape(cand, (1,) + cand.shape), np.zeros((1, n), dtype=np.int64))
    logits = han_logits(h3, c3, store, slope)
    return nk.reshape(nk.masked_softmax(logits, np.asarray(mask, bool)[None]), (n,))


def local_user_embedding(history_embs, alpha):
    """Convex combination of history embeddings."""
    hist, alpha = nk.as_tensor(history_embs), nk.as_tensor(alpha)
    return nk.reduce_sum(hist * nk.reshape(alpha, alpha.shape + (1,)), axis=-2)


def local_head(user_emb, item_emb, store, slope=0.2):
    """Logit of the local click probability."""
    x = nk.concat([user_emb, item_emb], axis=-1)
    hidden = nk.leaky_relu(nk.affine(x, store.param("local.head.W1"), store.param("local.head.b1")), slope)
    z = nk.affine(hidden, store.param("local.head.W2"), store.param("local.head.b2"))
    return nk.reshape(z, z.shape[:-1])


def local_predict(user_emb, item_emb, store, slope=0.2):
    return nk.sigmoid(local_head(user_emb, item_emb, store, slope))


def local_forward(store, titles, descs, cand, hist, hmask, slope=0.2):
    """Batched local probabilities.

    ``titles``/``descs`` are the token matrices of every item, ``cand`` the
    candidate item per row and ``hist``/``hmask`` the padded history. Each item
    that appears in the batch is encoded once.
    """
    cand = np.asarray(cand, dtype=np.int64)
    hist = np.asarray(hist, dtype=np.int64)
    hmask = np.asarray(hmask, dtype=bool)
    needed, inverse = np.unique(np.concatenate([cand, hist[hmask]]), return_inverse=True)
    s_all = kee_encode(titles[needed], descs[needed], store, slope)

    pos = np.searchsorted(needed, np.where(hmask, hist, needed[0]))
    cand_pos = inverse[:len(cand)]
    s_hist = nk.take(s_all, pos)
    s_cand = nk.take(s_all, cand_pos)
    # attention layer split into history and candidate halves, each applied
    # once per distinct item instead of once per (row, slot)
    W1 = store.param("local.han.W1")
    d = s_all.shape[1]
    hist_part = nk.matmul(s_all, nk.slice_axis(W1, 0, d, axis=0))
    cand_part = nk.matmul(s_all, nk.slice_axis(W1, d, 2 * d, axis=0)) + store.param("local.han.b1")
    pre = nk.take(hist_part, pos) + nk.reshape(nk.take(cand_part, cand_pos), (len(cand), 1, -1))
    scores = nk.matmul(nk.leaky_relu(pre, slope), store.param("local.han.W2"))
    logits = nk.reshape(scores, scores.shape[:-1]) + store.param("local.han.b2")
    alpha = nk.masked_softmax(logits, hmask)
    user = local_user_embedding(s_hist, alpha)
    # cold-start rows have all-zero attention; they take the learned default user
    cold = (~hmask.any(axis=1)).astype(np.float64)[:, None]
    user = user + nk.take(store.param("local.default_user"), np.zeros(len(cand), dtype=np.int64)) * cold
    return nk.sigmoid(local_head(user, s_cand, store, slope))
