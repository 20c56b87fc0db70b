"""Minimal reverse-mode automatic differentiation on numpy arrays."""

from .check import NonFiniteError, grad_check
from .ops import (
    add, avg_pool2d, bias_add, concat, conv2d, elementwise, exp, l2norm, matmul,
    max_pool2d, mul, reduce, reduce_mean, reduce_sum, relu, reshape, scale,
    sigmoid, slice_axis, sub, take_rows, tanh,
)
from .tensor import ShapeError, Tape, Tensor, active_tape, backward

__all__ = [
    "NonFiniteError", "ShapeError", "Tape", "Tensor", "active_tape", "add",
    "avg_pool2d", "backward", "bias_add", "concat", "conv2d", "elementwise",
    "exp", "grad_check", "l2norm", "matmul", "max_pool2d", "mul", "reduce",
    "reduce_mean", "reduce_sum", "relu", "reshape", "scale", "sigmoid",
    "slice_axis", "sub", "take_rows", "tanh",
]
