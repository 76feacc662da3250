from ._kernels import BACKEND
from .gradcheck import GradCheckReport, NondeterministicError, grad_check, rel_error
from .ops import (
    add,
    cross_entropy,
    dropout,
    layer_norm,
    matmul,
    mean,
    mul,
    relu,
    reshape,
    scale,
    softmax,
    sub,
    sum,
    take_rows,
    transpose,
)
from .tensor import DEFAULT_DTYPE, GradTape, Tensor, as_tensor, backward

__all__ = [
    "BACKEND", "DEFAULT_DTYPE", "GradCheckReport", "GradTape", "NondeterministicError", "Tensor",
    "add", "as_tensor", "backward", "cross_entropy", "dropout", "grad_check", "layer_norm",
    "matmul", "mean", "mul", "rel_error", "relu", "reshape", "scale", "softmax", "sub", "sum",
    "take_rows", "transpose",
]
