"""Minimal dense numeric kernel with reverse-mode differentiation."""

from .gradcheck import finite_difference_grad, max_relative_error, tape_gradients
from .ops import (
    activate,
    add,
    affine,
    clip,
    concat,
    dropout,
    log,
    matmul,
    mean,
    mul,
    neg,
    reshape,
    row_sum,
    sigmoid,
    softmax,
    sub,
    take_rows,
    tanh,
    total,
    transpose,
)
from .tensor import (
    DEFAULT_DTYPE,
    Parameter,
    ShapeError,
    Tape,
    Tensor,
    active_tape,
    as_tensor,
    backward,
)

__all__ = [
    "DEFAULT_DTYPE",
    "Parameter",
    "ShapeError",
    "Tape",
    "Tensor",
    "activate",
    "active_tape",
    "add",
    "affine",
    "as_tensor",
    "backward",
    "clip",
    "concat",
    "dropout",
    "finite_difference_grad",
    "log",
    "matmul",
    "max_relative_error",
    "mean",
    "mul",
    "neg",
    "reshape",
    "row_sum",
    "sigmoid",
    "softmax",
    "sub",
    "take_rows",
    "tanh",
    "tape_gradients",
    "total",
    "transpose",
]
