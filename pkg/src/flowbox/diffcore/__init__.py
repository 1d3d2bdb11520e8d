"""Minimal reverse-mode differentiable arrays (float64, numpy-backed)."""

from .gradcheck import NonFiniteError, finite_diff_check, numeric_gradient
from .optim import AdamState, adam_step, clip_grad_norm, global_grad_norm
from .tensor import (
    Parameter,
    ShapeError,
    Tensor,
    add,
    as_tensor,
    backprop,
    clip,
    concat,
    cos,
    div,
    exp,
    gelu,
    getitem,
    grad_enabled,
    layer_norm,
    log,
    log_softmax,
    matmul,
    mean,
    mse,
    mul,
    neg,
    no_grad,
    power,
    reshape,
    sin,
    softmax,
    softplus,
    sqrt,
    sub,
    sum_,
    swapaxes,
    tanh,
    transpose,
    where,
)

__all__ = [
    "AdamState", "NonFiniteError", "Parameter", "ShapeError", "Tensor", "adam_step", "add",
    "as_tensor", "backprop", "clip", "clip_grad_norm", "concat", "cos", "div", "exp",
    "finite_diff_check", "gelu", "getitem", "global_grad_norm", "grad_enabled", "layer_norm",
    "log", "log_softmax", "matmul", "mean", "mse", "mul", "neg", "no_grad", "numeric_gradient",
    "power", "reshape", "sin", "softmax", "softplus", "sqrt", "sub", "sum_", "swapaxes", "tanh",
    "transpose", "where",
]
