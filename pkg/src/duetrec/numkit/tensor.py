"""Small reverse-mode tensor kernel on top of numpy.

Only the handful of operations the recommender needs are provided. Every op
returns a new :class:`Tensor`; when any input requires gradients the op also
records a closure that maps the output gradient back to its inputs.
"""
import numpy as np
from scipy import sparse


class DimensionError(ValueError):
    """Raised when operand shapes do not conform."""

    def __init__(self, op, *shapes):
        self.op = op
        self.shapes = shapes
        super().__init__(f"{op}: incompatible shapes {', '.join(str(s) for s in shapes)}")


class NumericError(ArithmeticError):
    """Raised when a tensor would hold NaN or Inf."""


class Tensor:
    """Dense float64 array plus the bookkeeping needed for backprop."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_sink")

    def __init__(self, data, parents=(), backward=None, sink=None):
        arr = np.asarray(data, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise NumericError("tensor contains non-finite entries")
        self.data = arr
        self.grad = None
        self._parents = parents
        self._backward = backward
        self._sink = sink
        self.requires_grad = sink is not None or bool(parents)

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into every parameter sink reachable from self."""
        if grad is None:
            grad = np.ones_like(self.data)
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._sink is not None:
                node._sink(g)
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward):
    live = tuple(p for p in parents if p.requires_grad)
    if not live:
        return Tensor(data)
    return Tensor(data, tuple(parents), backward)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data + b.data
    except ValueError:
        raise DimensionError("add", a.shape, b.shape) from None
    return _node(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def neg(a):
    return _node(-a.data, (a,), lambda g: (-g,))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data * b.data
    except ValueError:
        raise DimensionError("mul", a.shape, b.shape) from None
    return _node(out, (a, b), lambda g: (_unbroadcast(g * b.data, a.shape),
                                         _unbroadcast(g * a.data, b.shape)))


def matmul(x, W):
    """``x[..., n] @ W[n, m]`` with W strictly two-dimensional."""
    x, W = as_tensor(x), as_tensor(W)
    if W.data.ndim != 2 or x.data.ndim < 1 or x.shape[-1] != W.shape[0]:
        raise DimensionError("matmul", x.shape, W.shape)
    out = x.data @ W.data

    def backward(g):
        gx = g @ W.data.T if x.requires_grad else None
        gW = x.data.reshape(-1, W.shape[0]).T @ g.reshape(-1, W.shape[1]) if W.requires_grad else None
        return gx, gW

    return _node(out, (x, W), backward)


def affine(x, W, b):
    """Row-wise ``x @ W + b``."""
    x, W, b = as_tensor(x), as_tensor(W), as_tensor(b)
    if W.data.ndim != 2 or x.data.ndim < 1 or x.shape[-1] != W.shape[0]:
        raise DimensionError("affine", x.shape, W.shape)
    if b.shape != (W.shape[1],):
        raise DimensionError("affine", W.shape, b.shape)
    return add(matmul(x, W), b)


def einsum(spec, a, b):
    """Two-operand einsum with an explicit ``->`` output.

    Every index of an operand must appear either in the output or in the other
    operand; that is what makes the backward pass another einsum.
    """
    a, b = as_tensor(a), as_tensor(b)
    lhs, out_idx = spec.replace(" ", "").split("->")
    ia, ib = lhs.split(",")
    for own, other in ((ia, ib), (ib, ia)):
        if any(c not in out_idx and c not in other for c in own):
            raise ValueError(f"einsum {spec!r}: index summed inside one operand")
    try:
        out = np.einsum(spec, a.data, b.data)
    except ValueError:
        raise DimensionError("einsum", a.shape, b.shape) from None

    def backward(g):
        return (np.einsum(f"{out_idx},{ib}->{ia}", g, b.data),
                np.einsum(f"{out_idx},{ia}->{ib}", g, a.data))

    return _node(out, (a, b), backward)


def leaky_relu(x, slope=0.2):
    if not 0.0 <= slope < 1.0:
        raise ValueError(f"slope must lie in [0, 1), got {slope}")
    x = as_tensor(x)
    scale = np.where(x.data > 0, 1.0, slope)
    return _node(x.data * scale, (x,), lambda g: (g * scale,))


def sigmoid(x):
    x = as_tensor(x)
    # split by sign so exp never overflows
    z = x.data
    e = np.exp(-np.abs(z))
    out = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _node(out, (x,), lambda g: (g * out * (1.0 - out),))


def softmax(logits, axis=-1):
    x = as_tensor(logits)
    if x.data.size == 0:
        raise ValueError("softmax of an empty vector")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _node(out, (x,), backward)


def masked_softmax(logits, mask):
    """Softmax over the last axis restricted to ``mask`` == True.

    Masked slots get exactly zero weight. Rows with no live slot come out all
    zero rather than NaN.
    """
    x = as_tensor(logits)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != x.shape:
        raise DimensionError("masked_softmax", x.shape, mask.shape)
    z = np.where(mask, x.data, -np.inf)
    top = z.max(axis=-1, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    e = np.where(mask, np.exp(np.where(mask, x.data, 0.0) - top), 0.0)
    s = e.sum(axis=-1, keepdims=True)
    out = e / np.where(s > 0, s, 1.0)

    def backward(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _node(out, (x,), backward)


def take(table, idx):
    """Row gather: ``table[idx]`` for an integer index array of any shape."""
    table = as_tensor(table)
    idx = np.asarray(idx, dtype=np.int64)
    out = table.data[idx]

    def backward(g):
        return (scatter_rows(idx.reshape(-1), g.reshape((-1,) + table.shape[1:]), table.shape),)

    return _node(out, (table,), backward)


def scatter_rows(idx, rows, shape):
    """``out[idx[n]] += rows[n]`` into zeros of ``shape``, as a sparse product."""
    rows = rows.reshape(len(idx), -1)
    hits = sparse.csr_matrix((np.ones(len(idx)), (idx, np.arange(len(idx)))), shape=(shape[0], len(idx)))
    return np.asarray(hits @ rows).reshape(shape)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise DimensionError("concat", *(t.shape for t in tensors)) from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _node(out, tuple(tensors), backward)


def slice_axis(x, start, stop, axis):
    x = as_tensor(x)
    sl = [slice(None)] * x.data.ndim
    sl[axis] = slice(start, stop)
    sl = tuple(sl)

    def backward(g):
        full = np.zeros_like(x.data)
        full[sl] = g
        return (full,)

    return _node(x.data[sl], (x,), backward)


def transpose(x, axes):
    x = as_tensor(x)
    inv = np.argsort(axes)
    return _node(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),))


def reshape(x, shape):
    x = as_tensor(x)
    return _node(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def max_axis(x, axis):
    """Max-pool along one axis; the gradient goes to the first maximiser."""
    x = as_tensor(x)
    arg = np.expand_dims(x.data.argmax(axis=axis), axis)
    out = np.take_along_axis(x.data, arg, axis=axis).squeeze(axis)

    def backward(g):
        full = np.zeros_like(x.data)
        np.put_along_axis(full, arg, np.expand_dims(g, axis), axis=axis)
        return (full,)

    return _node(out, (x,), backward)


def reduce_sum(x, axis=None):
    x = as_tensor(x)
    out = x.data.sum(axis=axis)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return _node(out, (x,), backward)


def binary_cross_entropy(p, labels, clamp=1e-12):
    """Summed ``-[y log p + (1-y) log(1-p)]`` with p clamped to [clamp, 1-clamp]."""
    p = as_tensor(p)
    y = np.asarray(labels, dtype=np.float64)
    if y.shape != p.shape:
        raise DimensionError("binary_cross_entropy", p.shape, y.shape)
    pc = np.clip(p.data, clamp, 1.0 - clamp)
    out = -(y * np.log(pc) + (1.0 - y) * np.log1p(-pc)).sum()
    inside = (p.data > clamp) & (p.data < 1.0 - clamp)

    def backward(g):
        return (g * inside * (-y / pc + (1.0 - y) / (1.0 - pc)),)

    return _node(out, (p,), backward)
