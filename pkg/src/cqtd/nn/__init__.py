"""Numpy reverse-mode autodiff: tensors, convolutions, layers, Adam, gradcheck."""
from __future__ import annotations

from .tensor import Tensor, no_grad, grad_enabled
from .conv import conv2d, conv2d_forward, conv2d_backward, same_padding, zero_stuff, weight_norm
from .layers import Module, Conv2d, TransposedConvTime, LeakyReLU, LEAKY_SLOPE

__all__ = [
    "Tensor", "no_grad", "grad_enabled",
    "conv2d", "conv2d_forward", "conv2d_backward", "same_padding", "zero_stuff", "weight_norm",
    "Module", "Conv2d", "TransposedConvTime", "LeakyReLU", "LEAKY_SLOPE",
]
