"""Numeric substrate: tensors, reverse-mode autodiff, Adam, initialisation."""

from .tensor import (
    Tensor, add, sub, mul, div, matmul, transpose, reshape, getitem, concat,
    relu, tanh, exp, log, sigmoid, tsum, mean, softmax,
)
from .functional import linear, conv1d, maxpool1d, layer_norm, dropout, binary_cross_entropy
from .gradcheck import grad_check, grad_check_params, relative_error
from .optim import Adam, AdamState, adam_step
from .init import init_params, make_rng, spawn

__all__ = [
    "Tensor", "add", "sub", "mul", "div", "matmul", "transpose", "reshape", "getitem",
    "concat", "relu", "tanh", "exp", "log", "sigmoid", "tsum", "mean", "softmax",
    "linear", "conv1d", "maxpool1d", "layer_norm", "dropout", "binary_cross_entropy",
    "grad_check", "grad_check_params", "relative_error",
    "Adam", "AdamState", "adam_step", "init_params", "make_rng", "spawn",
]
