from __future__ import annotations

import copy
import math
from typing import Iterator

import numpy as np

from ..errors import ShapeError
from . import tensor as T
from .conv import conv2d, same_padding, weight_norm, zero_stuff, _pair
from .tensor import Tensor

LEAKY_SLOPE = 0.1


class Module:
    """Parameter container; sub-modules and parameters are discovered by attribute.

    Every :class:`Tensor` attribute is a parameter; buffers are kept as plain arrays.
    """

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):  # pragma: no cover - abstract
        raise NotImplementedError

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor):
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def n_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def requires_grad_(self, flag: bool) -> "Module":
        """Freeze or unfreeze every parameter."""
        for p in self.parameters():
            p.requires_grad = flag
        return self

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise ShapeError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, p in params.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ShapeError(f"{name}: checkpoint shape {arr.shape} != parameter shape {p.shape}")
            p.data = arr.astype(p.dtype).copy()

    def astype(self, dtype) -> "Module":
        """Deep copy with every parameter cast to ``dtype``."""
        clone = copy.deepcopy(self)
        for p in clone.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return clone


def _param(arr: np.ndarray, name: str) -> Tensor:
    return Tensor(arr.astype(np.float32), requires_grad=True, name=name)


class Conv2d(Module):
    """Weight-normalised 2-D convolution; ``padding="same"`` keeps ``ceil(size/stride)``."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel=(3, 3),
        stride=1,
        dilation=1,
        padding="same",
        rng: np.random.Generator | None = None,
        use_weight_norm: bool = True,
    ):
        rng = np.random.default_rng(0) if rng is None else rng
        self.in_channels, self.out_channels = in_channels, out_channels
        self.kernel = _pair(kernel)
        self.stride = _pair(stride)
        self.dilation = _pair(dilation)
        self.padding = same_padding(self.kernel, self.dilation) if padding == "same" else padding
        fan_in = in_channels * self.kernel[0] * self.kernel[1]
        # Kaiming-uniform bound for leaky-ReLU(0.1)
        bound = math.sqrt(6.0 / ((1.0 + LEAKY_SLOPE**2) * fan_in))
        v = rng.uniform(-bound, bound, size=(out_channels, in_channels) + self.kernel)
        self.use_weight_norm = use_weight_norm
        if use_weight_norm:
            self.weight_v = _param(v, "weight_v")
            self.weight_g = _param(np.sqrt((v * v).sum(axis=(1, 2, 3))), "weight_g")
        else:
            self.weight = _param(v, "weight")
        b = 1.0 / math.sqrt(fan_in)
        self.bias = _param(rng.uniform(-b, b, size=out_channels), "bias")

    def weight_tensor(self) -> Tensor:
        return weight_norm(self.weight_v, self.weight_g) if self.use_weight_norm else self.weight

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ShapeError(
                f"Conv2d({self.in_channels}->{self.out_channels}) got input of shape {x.shape}"
            )
        return conv2d(x, self.weight_tensor(), self.bias, self.stride, self.padding, self.dilation)

    def output_shape(self, h: int, w: int) -> tuple[int, int]:
        from .conv import output_size

        pt, pb, pl, pr = self.padding if len(self.padding) == 4 else same_padding(self.kernel, self.dilation)
        return (
            output_size(h, self.kernel[0], self.stride[0], self.dilation[0], pt, pb),
            output_size(w, self.kernel[1], self.stride[1], self.dilation[1], pl, pr),
        )


class TransposedConvTime(Module):
    """Transposed convolution along the last axis, ``stride``-fold upsampling.

    Written as zero insertion followed by a ``(1, kernel)`` convolution, which
    is the same linear map as a strided transposed convolution.
    """

    def __init__(self, in_channels: int, out_channels: int, stride: int, kernel: int | None = None, rng=None):
        self.stride = stride
        kernel = 2 * stride if kernel is None else kernel
        self.conv = Conv2d(in_channels, out_channels, (1, kernel), rng=rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.conv(zero_stuff(x, self.stride, axis=-1))


class LeakyReLU(Module):
    def __init__(self, slope: float = LEAKY_SLOPE):
        self.slope = slope

    def forward(self, x: Tensor) -> Tensor:
        return T.leaky_relu(x, self.slope)
