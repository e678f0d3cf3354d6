from .tensor import (
    DimensionError,
    NumericError,
    Tensor,
    add,
    affine,
    as_tensor,
    binary_cross_entropy,
    concat,
    einsum,
    leaky_relu,
    masked_softmax,
    matmul,
    max_axis,
    mul,
    reduce_sum,
    reshape,
    sigmoid,
    slice_axis,
    softmax,
    take,
    transpose,
)
from .params import AdamConfig, Entry, ParamSpec, ParamStore, StateError, adam_step, init_params
from .gradcheck import grad_check
from .checkpoint import CheckpointError, dump_tensors, load_tensors, parse_tensors, save_tensors

__all__ = [
    "DimensionError",
    "NumericError",
    "Tensor",
    "add",
    "affine",
    "as_tensor",
    "binary_cross_entropy",
    "concat",
    "einsum",
    "leaky_relu",
    "masked_softmax",
    "matmul",
    "max_axis",
    "mul",
    "reduce_sum",
    "reshape",
    "sigmoid",
    "slice_axis",
    "softmax",
    "take",
    "transpose",
    "AdamConfig",
    "Entry",
    "ParamSpec",
    "ParamStore",
    "StateError",
    "adam_step",
    "init_params",
    "grad_check",
    "CheckpointError",
    "dump_tensors",
    "load_tensors",
    "parse_tensors",
    "save_tensors",
]
