import numpy as np

from .tensor import NumericError


def _loss_value(f, store):
    out = f(store)
    value = float(np.asarray(out.data if hasattr(out, "data") else out))
    if not np.isfinite(value):
        raise NumericError(f"loss is not finite: {value}")
    return out, value


def grad_check(f, store, eps=1e-5, names=None, max_coords=12, seed=0):
    """Compare backprop gradients of ``f(store)`` against central differences.

    ``f`` must return a scalar :class:`Tensor` built from ``store.param``
    leaves. Up to ``max_coords`` coordinates per entry are probed. Returns the
    largest ``|a - n| / max(1, |a|, |n|)`` seen.

    The default step sits near the float64 optimum for central differences
    (cube root of machine epsilon). Wider steps can cross a max-pool or
    ReLU switch and report a kink as an error.
    """
    names = list(names) if names is not None else list(store.entries)
    store.zero_grad()
    out, _ = _loss_value(f, store)
    if getattr(out, "requires_grad", False):
        out.backward()
    analytic = {n: store.entries[n].grad.copy() for n in names}
    store.zero_grad()

    rng = np.random.default_rng(seed)
    worst = 0.0
    for name in names:
        value = store.entries[name].value
        size = value.size
        coords = np.arange(size) if size <= max_coords else rng.choice(size, max_coords, replace=False)
        flat = value.reshape(-1)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + eps
            _, hi = _loss_value(f, store)
            flat[c] = orig - eps
            _, lo = _loss_value(f, store)
            flat[c] = orig
            numeric = (hi - lo) / (2 * eps)
            a = analytic[name].reshape(-1)[c]
            err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            worst = max(worst, err)
    return worst
