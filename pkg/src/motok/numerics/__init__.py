"""Minimal dense-tensor engine with reverse-mode automatic differentiation."""
from .tensor import Node, Tensor, as_tensor, default_dtype, no_grad, parameter, precision
from .ops import (
    abs,
    add,
    avg_pool2d,
    concat,
    conv2d,
    getitem,
    layer_norm,
    linear,
    matmul,
    mean,
    mul,
    nearest_upsample,
    pad_zeros,
    relu,
    reshape,
    rotate_pairs,
    silu,
    softmax,
    square,
    std,
    stop_gradient,
    straight_through,
    sub,
    sum,
    transpose,
    var,
)
from .gradcheck import numerical_grad, relative_error

__all__ = [
    "Node", "Tensor", "as_tensor", "default_dtype", "no_grad", "parameter", "precision",
    "abs", "add", "avg_pool2d", "concat", "conv2d", "getitem", "layer_norm", "linear",
    "matmul", "mean", "mul", "nearest_upsample", "pad_zeros", "relu", "reshape", "rotate_pairs",
    "silu", "softmax", "square", "std", "stop_gradient", "straight_through", "sub", "sum",
    "transpose", "var", "numerical_grad", "relative_error",
]
