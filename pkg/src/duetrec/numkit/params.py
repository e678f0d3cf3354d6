"""Named parameter storage, initialisers and the Adam optimiser."""
from dataclasses import dataclass

import numpy as np

from .tensor import Tensor


class StateError(RuntimeError):
    """Optimiser or store used in an inconsistent state."""


@dataclass
class Entry:
    value: np.ndarray
    grad: np.ndarray = None
    m: np.ndarray = None
    v: np.ndarray = None
    step: int = 0

    def __post_init__(self):
        self.value = np.array(self.value, dtype=np.float64)
        if self.m is None:
            self.m = np.zeros_like(self.value)
        if self.v is None:
            self.v = np.zeros_like(self.value)


class ParamStore:
    """Ordered map ``name -> Entry``. Names are unique."""

    def __init__(self):
        self.entries = {}

    def add(self, name, value):
        if name in self.entries:
            raise KeyError(f"duplicate parameter name {name!r}")
        self.entries[name] = Entry(value)
        return self.entries[name]

    def __contains__(self, name):
        return name in self.entries

    def __getitem__(self, name):
        return self.entries[name].value

    def __setitem__(self, name, value):
        entry = self.entries[name]
        value = np.asarray(value, dtype=np.float64)
        if value.shape != entry.value.shape:
            raise ValueError(f"{name}: shape {value.shape} != {entry.value.shape}")
        entry.value = value.copy()

    def names(self, prefix=""):
        return [n for n in self.entries if n.startswith(prefix)]

    def param(self, name):
        """Leaf tensor whose gradient accumulates into the entry."""
        entry = self.entries[name]

        def sink(g):
            if entry.grad is None:
                entry.grad = np.zeros_like(entry.value)
            entry.grad += g

        return Tensor(entry.value, sink=sink)

    def zero_grad(self, names=None):
        for name in names or self.entries:
            e = self.entries[name]
            e.grad = np.zeros_like(e.value)

    def state_dict(self):
        return {name: e.value.copy() for name, e in self.entries.items()}

    def load_state_dict(self, tensors, strict=True):
        if strict:
            missing = set(self.entries) - set(tensors)
            extra = set(tensors) - set(self.entries)
            if missing or extra:
                raise KeyError(f"checkpoint mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for name, value in tensors.items():
            if name in self.entries:
                self[name] = value


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")
        if self.lr <= 0 or self.epsilon <= 0:
            raise ValueError("Adam lr and epsilon must be positive")


def adam_step(store, cfg, names=None):
    """One bias-corrected Adam update, then zero the gradients.

    An entry whose gradient is identically zero is left untouched (its moments
    and step count too), so a zero-gradient step is the identity.
    """
    names = list(names) if names is not None else list(store.entries)
    for name in names:
        if store.entries[name].grad is None:
            raise StateError(f"no gradient recorded for {name!r}")
    for name in names:
        e = store.entries[name]
        g = e.grad
        if np.any(g):
            e.step += 1
            e.m = cfg.beta1 * e.m + (1.0 - cfg.beta1) * g
            e.v = cfg.beta2 * e.v + (1.0 - cfg.beta2) * g * g
            m_hat = e.m / (1.0 - cfg.beta1 ** e.step)
            v_hat = e.v / (1.0 - cfg.beta2 ** e.step)
            e.value = e.value - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.epsilon)
        e.grad = np.zeros_like(e.value)
    return store


def glorot(rng, shape):
    """Uniform in +-sqrt(6 / (fan_in + fan_out)) using the last two dims."""
    fan_in, fan_out = shape[-2], shape[-1]
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def embedding_init(rng, rows, dim):
    return rng.uniform(-0.5 / dim, 0.5 / dim, size=(rows, dim))


@dataclass
class ParamSpec:
    """Shape and initialiser kind for one named parameter."""

    shape: tuple
    kind: str = "matrix"  # matrix | bias | embedding | const
    fill: float = 0.0


def init_params(store, specs, rng):
    for name, spec in specs.items():
        if spec.kind == "matrix":
            value = glorot(rng, spec.shape)
        elif spec.kind == "embedding":
            value = embedding_init(rng, *spec.shape)
        elif spec.kind == "bias":
            value = np.zeros(spec.shape)
        elif spec.kind == "const":
            value = np.full(spec.shape, spec.fill)
        else:
            raise ValueError(f"unknown init kind {spec.kind!r}")
        store.add(name, value)
    return store
