"""A small reverse-mode autodiff core on top of numpy.

Every op builds its output together with a closure that pushes the upstream
gradient to its inputs; :meth:`Tensor.backward` walks the graph in reverse
topological order. Network activations are 4-D ``(N, C, H, W)``; scalars and
other ranks appear only in losses and glue code.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

from ..errors import NonFiniteError, ShapeError

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and arr.dtype.kind in "iub":
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple = ()
        self._backward: Callable | None = None

    # -- introspection ------------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # -- autograd -----------------------------------------------------------
    def accumulate(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        g = np.asarray(g, dtype=self.data.dtype)
        if g.shape != self.data.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match tensor shape {self.data.shape}")
        self.grad = g.copy() if self.grad is None else self.grad + g

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad=None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() without a gradient needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.accumulate(g)
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # -- operator sugar -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def sum(self):
        return total(self)

    def mean(self):
        return mean(self)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype if dtype is not None else np.float32))


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{op} produced non-finite values")


def make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    """Wrap ``data`` as the output of an op; records the graph only when needed."""
    _check_finite(data, op)
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


# ---------------------------------------------------------------------------
# Elementwise and reduction ops
# ---------------------------------------------------------------------------

def _scalar_or_tensor(b, like: Tensor):
    if isinstance(b, Tensor):
        if b.shape != like.shape and b.data.size != 1:
            raise ShapeError(f"shapes {like.shape} and {b.shape} do not match (no broadcasting)")
        return b
    return None


def _reduce_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    return g if g.shape == shape else np.asarray(g.sum()).reshape(shape)


def add(a: Tensor, b) -> Tensor:
    bt = _scalar_or_tensor(b, a)
    if bt is None:
        return make(a.data + np.asarray(b, dtype=a.dtype), (a,), lambda g: (g,), "add")
    return make(a.data + bt.data, (a, bt), lambda g: (_reduce_to(g, a.shape), _reduce_to(g, bt.shape)), "add")


def sub(a: Tensor, b) -> Tensor:
    bt = _scalar_or_tensor(b, a)
    if bt is None:
        return make(a.data - np.asarray(b, dtype=a.dtype), (a,), lambda g: (g,), "sub")
    return make(a.data - bt.data, (a, bt), lambda g: (_reduce_to(g, a.shape), _reduce_to(-g, bt.shape)), "sub")


def mul(a: Tensor, b) -> Tensor:
    bt = _scalar_or_tensor(b, a)
    if bt is None:
        c = np.asarray(b, dtype=a.dtype)
        return make(a.data * c, (a,), lambda g: (g * c,), "mul")
    return make(
        a.data * bt.data,
        (a, bt),
        lambda g: (_reduce_to(g * bt.data, a.shape), _reduce_to(g * a.data, bt.shape)),
        "mul",
    )


def total(a: Tensor) -> Tensor:
    return make(np.asarray(a.data.sum(), dtype=a.dtype), (a,), lambda g: (np.broadcast_to(g, a.shape),), "sum")


def mean(a: Tensor) -> Tensor:
    n = a.data.size
    return make(
        np.asarray(a.data.mean(), dtype=a.dtype), (a,), lambda g: (np.broadcast_to(g / n, a.shape),), "mean"
    )


def square(a: Tensor) -> Tensor:
    return make(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,), "square")


def absolute(a: Tensor) -> Tensor:
    return make(np.abs(a.data), (a,), lambda g: (np.sign(a.data) * g,), "abs")


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return make(y, (a,), lambda g: ((1.0 - y * y) * g,), "tanh")


def leaky_relu(a: Tensor, slope: float = 0.1) -> Tensor:
    pos = a.data > 0
    s = a.dtype.type(slope)
    return make(np.where(pos, a.data, s * a.data), (a,), lambda g: (np.where(pos, g, s * g),), "leaky_relu")


def log_clamp(a: Tensor, floor: float) -> Tensor:
    """``log(max(a, floor))``; no gradient flows where the floor is active."""
    live = a.data > floor
    y = np.log(np.maximum(a.data, floor))
    return make(y, (a,), lambda g: (np.where(live, g / np.where(live, a.data, 1.0), 0.0),), "log_clamp")


def reshape(a: Tensor, shape: tuple) -> Tensor:
    return make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    inverse = tuple(np.argsort(axes))
    return make(np.ascontiguousarray(a.data.transpose(axes)), (a,), lambda g: (g.transpose(inverse),), "transpose")


def crop(a: Tensor, length: int, axis: int = -1) -> Tensor:
    """Keep the first ``length`` entries along ``axis``."""
    axis = axis % a.ndim
    if length > a.shape[axis]:
        raise ShapeError(f"cannot crop axis {axis} of size {a.shape[axis]} to {length}")
    index = [slice(None)] * a.ndim
    index[axis] = slice(0, length)
    index = tuple(index)

    def backward(g):
        full = np.zeros(a.shape, dtype=a.dtype)
        full[index] = g
        return (full,)

    return make(a.data[index], (a,), backward, "crop")


def concat(xs: Sequence[Tensor], axis: int = 1) -> Tensor:
    """Stack along ``axis``; every other dimension must agree."""
    xs = list(xs)
    if not xs:
        raise ShapeError("concat needs at least one tensor")
    ref = xs[0].shape
    axis = axis % len(ref)
    for x in xs[1:]:
        if len(x.shape) != len(ref) or any(s != r for i, (s, r) in enumerate(zip(x.shape, ref)) if i != axis):
            raise ShapeError(f"cannot concatenate {x.shape} with {ref} along axis {axis}")
    sizes = [x.shape[axis] for x in xs]
    cuts = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, cuts, axis=axis))

    return make(np.concatenate([x.data for x in xs], axis=axis), xs, backward, "concat")


def split(a: Tensor, sizes: Sequence[int], axis: int) -> list[Tensor]:
    """Inverse of :func:`concat`; each piece back-propagates into its slice of ``a``."""
    axis = axis % a.ndim
    if sum(sizes) != a.shape[axis]:
        raise ShapeError(f"sizes {list(sizes)} do not sum to axis length {a.shape[axis]}")
    out = []
    start = 0
    for size in sizes:
        index = [slice(None)] * a.ndim
        index[axis] = slice(start, start + size)
        index = tuple(index)

        def backward(g, index=index):
            full = np.zeros(a.shape, dtype=a.dtype)
            full[index] = g
            return (full,)

        out.append(make(a.data[index], (a,), backward, "split"))
        start += size
    return out


def linear_map(x: Tensor, forward: Callable, adjoint: Callable, op: str = "linear_map") -> Tensor:
    """Apply a linear operator given as numpy callables; ``adjoint`` must be its exact transpose."""
    y = np.asarray(forward(x.data), dtype=x.dtype)
    return make(y, (x,), lambda g: (np.asarray(adjoint(g), dtype=x.dtype),), op)
