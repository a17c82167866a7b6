"""Dense fp64 tensor arithmetic with reverse-mode gradients."""

from . import checkpoint
from .gradcheck import GradCheckReport, analytic_grads, grad_check
from .tensor import (
    Graph,
    NonFiniteError,
    ShapeError,
    Tensor,
    add,
    amax,
    as_tensor,
    clip,
    concat,
    div,
    elu,
    exp,
    getitem,
    layer_norm,
    linear,
    log,
    matmul,
    mean,
    minimum,
    mul,
    neg,
    reshape,
    softmax,
    sqrt,
    square,
    sub,
    sum,
    swapaxes,
    tanh,
    transpose,
)

__all__ = [
    "checkpoint",
    "GradCheckReport",
    "analytic_grads",
    "grad_check",
    "Graph",
    "NonFiniteError",
    "ShapeError",
    "Tensor",
    "add",
    "amax",
    "as_tensor",
    "clip",
    "concat",
    "div",
    "elu",
    "exp",
    "getitem",
    "layer_norm",
    "linear",
    "log",
    "matmul",
    "mean",
    "minimum",
    "mul",
    "neg",
    "reshape",
    "softmax",
    "sqrt",
    "square",
    "sub",
    "sum",
    "swapaxes",
    "tanh",
    "transpose",
]
