"""Minimal tensor library: storage, 3-D network operators, reverse-mode autodiff, Adam."""
from .tensor import NonFiniteError, OpNode, Tensor, backward, grad_enabled, no_grad, set_debug_finite
from .functional import (
    add,
    concat_channels,
    conv3d,
    conv_transpose3d,
    maxpool3d,
    maxunpool3d,
    mean_all,
    mean_over_time,
    mul,
    neg_log_eps,
    relu,
    reshape,
    sigmoid,
    square,
    sub,
    sum_all,
)
from .optim import Adam, AdamState
from .gradcheck import gradcheck
from . import jht

__all__ = [
    "Adam", "AdamState", "NonFiniteError", "OpNode", "Tensor", "add", "backward", "concat_channels",
    "conv3d", "conv_transpose3d", "grad_enabled", "gradcheck", "jht", "maxpool3d", "maxunpool3d",
    "mean_all", "mean_over_time", "mul", "neg_log_eps", "no_grad", "relu", "reshape", "set_debug_finite",
    "sigmoid", "square", "sub", "sum_all",
]
