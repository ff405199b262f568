from __future__ import annotations

import numpy as np

from ..errors import InvalidParameterError
from .tensor import Tensor


class Adam:
    """Adam with bias correction; defaults follow common GAN-vocoder practice."""

    def __init__(self, params: list[Tensor], lr: float = 2e-4, betas=(0.8, 0.99), eps: float = 1e-8):
        if lr <= 0:
            raise InvalidParameterError(f"learning rate must be positive, got {lr}")
        b1, b2 = betas
        if not (0 <= b1 < 1 and 0 <= b2 < 1):
            raise InvalidParameterError(f"betas must lie in [0, 1), got {betas}")
        self.params = list(params)
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            update = self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data = (p.data - update).astype(p.dtype)
