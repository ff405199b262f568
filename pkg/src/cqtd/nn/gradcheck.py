"""Central finite-difference gradient checking.

The analytic gradient is taken from the module at its own precision; the
numeric reference always runs on a float64 copy so that rounding in the
difference quotient does not dominate single-precision checks.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .layers import Module
from .tensor import Tensor, make, no_grad


@dataclass
class GradcheckReport:
    max_rel_error: float
    tolerance: float
    errors: dict = field(default_factory=dict)  # tensor name -> max relative error
    n_checked: int = 0

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_rel_error) and self.max_rel_error < self.tolerance)

    def summary(self) -> str:
        worst = max(self.errors, key=self.errors.get) if self.errors else "-"
        verdict = "PASS" if self.passed else "FAIL"
        return (
            f"{verdict} max_rel_error={self.max_rel_error:.3e} tol={self.tolerance:.0e} "
            f"coords={self.n_checked} worst={worst}"
        )


def output_tensors(out) -> list[Tensor]:
    """Flatten a module output (tensor, sequence, or object with ``tensors()``)."""
    if isinstance(out, Tensor):
        return [out]
    if hasattr(out, "tensors"):
        return list(out.tensors())
    flat = []
    for item in out:
        flat.extend(output_tensors(item))
    return flat


def _objective(module: Module, x: Tensor, weights: list[np.ndarray] | None, rng):
    outs = output_tensors(module(x))
    if weights is None:
        weights = [rng.standard_normal(o.shape) for o in outs]
    loss = None
    for o, w in zip(outs, weights):
        term = (o * Tensor(w.astype(o.dtype))).sum()
        loss = term if loss is None else loss + term
    return loss, weights


def _pick(size: int, n: int, rng) -> np.ndarray:
    return np.arange(size) if size <= n else rng.choice(size, n, replace=False)


def gradcheck(
    module: Module,
    x,
    tolerance: float = 1e-3,
    coords_per_tensor: int = 24,
    eps: float = 1e-6,
    seed: int = 0,
    check_input: bool = True,
) -> GradcheckReport:
    """Compare backprop against central differences of ``sum(r * module(x))``.

    ``r`` is a fixed random projection of every output tensor. The relative
    error of one coordinate is ``|a - n| / max(|a|, |n|, 1e-2 * max|n|)``
    where the last term is taken over the tensor being checked, so entries
    whose gradient is tiny next to the rest of the tensor are not judged on
    their own rounding noise.
    """
    rng = np.random.default_rng(seed)
    x_arr = np.asarray(x.data if isinstance(x, Tensor) else x)
    dtype = next(iter(module.parameters()), Tensor(x_arr)).dtype

    xin = Tensor(x_arr.astype(dtype), requires_grad=check_input, name="input")
    module.zero_grad()
    loss, weights = _objective(module, xin, None, rng)
    loss.backward()
    analytic = {"input": xin.grad} if check_input else {}
    for name, p in module.named_parameters():
        analytic[name] = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
    module.zero_grad()

    ref = module.astype(np.float64)
    ref_params = dict(ref.named_parameters())
    x64 = x_arr.astype(np.float64)

    def evaluate(arr_x) -> float:
        with no_grad():
            return float(_objective(ref, Tensor(arr_x), weights, rng)[0].data)

    errors = {}
    n_checked = 0
    for name, grad in analytic.items():
        target = x64 if name == "input" else ref_params[name].data
        picks = _pick(target.size, coords_per_tensor, rng)
        flat = target.reshape(-1)
        numeric = np.empty(picks.size)
        for i, idx in enumerate(picks):
            orig = flat[idx]
            flat[idx] = orig + eps
            hi = evaluate(x64)
            flat[idx] = orig - eps
            lo = evaluate(x64)
            flat[idx] = orig
            numeric[i] = (hi - lo) / (2 * eps)
        a = grad.reshape(-1)[picks].astype(np.float64)
        floor = max(1e-2 * np.abs(numeric).max(), 1e-12)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), floor)
        errors[name] = float(np.max(np.abs(a - numeric) / denom))
        n_checked += picks.size
    worst = max(errors.values()) if errors else 0.0
    return GradcheckReport(worst, tolerance, errors, n_checked)


def corrupt_gradient(t: Tensor, factor: float = 1.5) -> Tensor:
    """Identity in the forward pass whose backward scales the gradient; a negative control."""
    return make(t.data.copy(), (t,), lambda g: (g * factor,), "corrupt")


class CorruptedBackward(Module):
    """Wraps a module so every output carries a wrong gradient."""

    def __init__(self, inner: Module, factor: float = 1.5):
        self.inner = inner
        self.factor = factor

    def forward(self, x):
        return [corrupt_gradient(t, self.factor) for t in output_tensors(self.inner(x))]


class Lambda(Module):
    """Wrap a parameter-free function of one tensor as a module."""

    def __init__(self, fn: Callable[[Tensor], Tensor]):
        self.fn = fn

    def forward(self, x):
        return self.fn(x)
