"""Grouped 2-D cross-correlation with stride, dilation and (possibly asymmetric) zero padding.

Activations are moved to channels-last and zero-padded onto a grid whose
height and width are multiples of the stride. Splitting that grid into its
stride phases turns every kernel tap into a constant offset into a flattened
phase array, so each tap is one tall GEMM on a contiguous slice. Outputs are
accumulated on the whole grid; positions past the valid output region are
discarded (forward) or receive zero gradient (backward).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ShapeError, StateError
from .tensor import Tensor, make


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (int, np.integer)):
        return int(v), int(v)
    a, b = v
    return int(a), int(b)


def _quad(padding) -> tuple[int, int, int, int]:
    """(top, bottom, left, right) from an int, an (h, w) pair or a 4-tuple."""
    if isinstance(padding, (int, np.integer)):
        p = int(padding)
        return p, p, p, p
    padding = tuple(int(p) for p in padding)
    if len(padding) == 2:
        return padding[0], padding[0], padding[1], padding[1]
    if len(padding) == 4:
        return padding
    raise ShapeError(f"padding must have 1, 2 or 4 entries, got {padding}")


def output_size(size: int, kernel: int, stride: int, dilation: int, pad_lo: int, pad_hi: int) -> int:
    return (size + pad_lo + pad_hi - dilation * (kernel - 1) - 1) // stride + 1


@dataclass
class ConvContext:
    x_shape: tuple
    phases: np.ndarray  # (sh, sw, G, N*Hg*Wg, Cg) flattened stride phases of the padded input
    w: np.ndarray
    groups: int
    stride: tuple
    dilation: tuple
    padding: tuple
    out_hw: tuple
    grid: tuple  # (Hg, Wg) phase grid size
    span: int  # rows of the flattened grid that are computed
    taps: tuple  # (qi, qj, offset) per kernel tap, row-major over (i, j)
    im2col: bool


# Below this fan-in (taps x channels per group) the taps are gathered into one
# matrix and multiplied once; above it each tap is its own GEMM.
IM2COL_MAX_FAN_IN = 96


def _tap(i: int, j: int, stride, dilation, grid) -> tuple[int, int, int]:
    """Phase indices and flat offset read by kernel tap (i, j)."""
    ri, qi = divmod(i * dilation[0], stride[0])
    rj, qj = divmod(j * dilation[1], stride[1])
    return qi, qj, ri * grid[1] + rj


def _phases(x: np.ndarray, groups: int, stride, padding, grid) -> np.ndarray:
    n, c, h, w = x.shape
    cg = c // groups
    sh, sw = stride
    hg, wg = grid
    pt, _, pl, _ = padding
    xp = np.zeros((groups, n, hg * sh, wg * sw, cg), dtype=x.dtype)
    xp[:, :, pt : pt + h, pl : pl + w] = x.reshape(n, groups, cg, h, w).transpose(1, 0, 3, 4, 2)
    ph = xp.reshape(groups, n, hg, sh, wg, sw, cg).transpose(3, 5, 0, 1, 2, 4, 6)
    return np.ascontiguousarray(ph).reshape(sh, sw, groups, n * hg * wg, cg)


def _columns(ctx: ConvContext) -> np.ndarray:
    """Tap-major im2col matrix ``(G, taps * Cg, span)``."""
    g, cg = ctx.phases.shape[2], ctx.phases.shape[4]
    cols = np.empty((g, len(ctx.taps) * cg, ctx.span), dtype=ctx.phases.dtype)
    for t, (qi, qj, off) in enumerate(ctx.taps):
        cols[:, t * cg : (t + 1) * cg] = ctx.phases[qi, qj, :, off : off + ctx.span].transpose(0, 2, 1)
    return cols


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray | None = None, stride=1, padding=0, dilation=1,
                   groups: int = 1):
    """Returns ``(out, ctx)``; ``ctx`` feeds :func:`conv2d_backward`.

    With ``groups > 1`` input and output channels are split into that many
    equal blocks and block ``g`` of the output sees only block ``g`` of the
    input, so ``w`` has shape ``(groups * O, C / groups, kh, kw)``.
    """
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and weight, got input {x.shape} and weight {w.shape}")
    n, c, h, wd = x.shape
    o_total, cg, kh, kw = w.shape
    if groups < 1 or c % groups or o_total % groups:
        raise ShapeError(f"{groups} groups do not divide input {x.shape} and weight {w.shape}")
    if c != cg * groups:
        raise ShapeError(f"input {x.shape} has {c} channels but weight {w.shape} expects {cg * groups}")
    o = o_total // groups
    stride, dilation = _pair(stride), _pair(dilation)
    pt, pb, pl, pr = pad = _quad(padding)
    ho = output_size(h, kh, stride[0], dilation[0], pt, pb)
    wo = output_size(wd, kw, stride[1], dilation[1], pl, pr)
    if ho < 1 or wo < 1:
        raise ShapeError(
            f"input {x.shape} is too small for kernel {(kh, kw)} with dilation {dilation} and padding {pad}"
        )
    # grid large enough for every tap's shifted read of every valid output
    hg = max(-(-(h + pt + pb) // stride[0]), ho + (dilation[0] * (kh - 1)) // stride[0])
    wg = max(-(-(wd + pl + pr) // stride[1]), wo + (dilation[1] * (kw - 1)) // stride[1])
    grid = (hg, wg)
    taps = tuple(_tap(i, j, stride, dilation, grid) for i in range(kh) for j in range(kw))
    span = n * hg * wg - max(t[2] for t in taps)
    dtype = np.result_type(x, w)
    ctx = ConvContext(x.shape, _phases(x.astype(dtype, copy=False), groups, stride, pad, grid), w, groups,
                      stride, dilation, pad, (ho, wo), grid, span, taps, kh * kw * cg <= IM2COL_MAX_FAN_IN)
    wt = np.ascontiguousarray(w.reshape(groups, o, cg, kh * kw).transpose(0, 3, 2, 1), dtype=dtype)  # (G, taps, Cg, O)
    acc = np.zeros((groups, n * hg * wg, o), dtype=dtype)
    if ctx.im2col:
        acc[:, :span] = _columns(ctx).transpose(0, 2, 1) @ wt.reshape(groups, kh * kw * cg, o)
    else:
        for t, (qi, qj, off) in enumerate(taps):
            acc[:, :span] += ctx.phases[qi, qj, :, off : off + span] @ wt[:, t]
    out = acc.reshape(groups, n, hg, wg, o)[:, :, :ho, :wo].transpose(1, 0, 4, 2, 3).reshape(n, o_total, ho, wo)
    if b is not None:
        out = out + b.reshape(1, o_total, 1, 1)
    return np.ascontiguousarray(out), ctx


def conv2d_backward(upstream: np.ndarray, ctx: ConvContext | None, need_dx: bool = True, need_dw: bool = True):
    """Gradients ``(dx, dw, db)`` of a convolution given the upstream gradient.

    Skipped gradients come back as ``None``.
    """
    if ctx is None:
        raise StateError("conv2d_backward called without a saved forward context")
    n, c, h, wd = ctx.x_shape
    o_total, cg, kh, kw = ctx.w.shape
    groups = ctx.groups
    o = o_total // groups
    ho, wo = ctx.out_hw
    if upstream.shape != (n, o_total, ho, wo):
        raise ShapeError(f"upstream gradient {upstream.shape} does not match output {(n, o_total, ho, wo)}")
    hg, wg = ctx.grid
    dtype = ctx.phases.dtype
    g = np.zeros((groups, n, hg, wg, o), dtype=dtype)
    g[:, :, :ho, :wo] = upstream.reshape(n, groups, o, ho, wo).transpose(1, 0, 3, 4, 2)
    g = g.reshape(groups, -1, o)[:, : ctx.span]
    db = upstream.sum(axis=(0, 2, 3))
    wt = np.ascontiguousarray(ctx.w.reshape(groups, o, cg, kh * kw).transpose(0, 3, 1, 2), dtype=dtype)  # (G, taps, O, Cg)
    dphases = np.zeros_like(ctx.phases) if need_dx else None
    dw = None
    if ctx.im2col:
        if need_dw:
            dw = _columns(ctx) @ g  # (G, taps*Cg, O)
            dw = dw.reshape(groups, kh * kw, cg, o)
        if need_dx:
            wmat = wt.transpose(0, 2, 1, 3).reshape(groups, o, kh * kw * cg)
            dcols = g @ wmat
            for t, (qi, qj, off) in enumerate(ctx.taps):
                dphases[qi, qj, :, off : off + ctx.span] += dcols[..., t * cg : (t + 1) * cg]
    else:
        if need_dw:
            dw = np.empty((groups, kh * kw, cg, o), dtype=dtype)
        for t, (qi, qj, off) in enumerate(ctx.taps):
            if need_dw:
                dw[:, t] = ctx.phases[qi, qj, :, off : off + ctx.span].transpose(0, 2, 1) @ g
            if need_dx:
                dphases[qi, qj, :, off : off + ctx.span] += g @ wt[:, t]
    if dw is not None:
        dw = dw.transpose(0, 3, 2, 1).reshape(o_total, cg, kh, kw).astype(ctx.w.dtype)
    if not need_dx:
        return None, dw, db
    sh, sw = ctx.stride
    dxp = dphases.reshape(sh, sw, groups, n, hg, wg, cg).transpose(2, 3, 4, 0, 5, 1, 6)
    dxp = dxp.reshape(groups, n, hg * sh, wg * sw, cg)
    pt, _, pl, _ = ctx.padding
    dx = dxp[:, :, pt : pt + h, pl : pl + wd].transpose(1, 0, 4, 2, 3).reshape(n, c, h, wd)
    return np.ascontiguousarray(dx), dw, db


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride=1, padding=0, dilation=1, groups: int = 1) -> Tensor:
    out, ctx = conv2d_forward(x.data, w.data, None if b is None else b.data, stride, padding, dilation, groups)

    def backward(g):
        dx, dw, db = conv2d_backward(g, ctx, x.requires_grad, w.requires_grad)
        return (dx, dw) if b is None else (dx, dw, db)

    parents = (x, w) if b is None else (x, w, b)
    return make(out.astype(x.dtype, copy=False), parents, backward, "conv2d")


def same_padding(kernel, dilation=1) -> tuple[int, int, int, int]:
    """Padding that keeps ``ceil(size / stride)`` outputs; extra sample goes to the end."""
    kh, kw = _pair(kernel)
    dh, dw = _pair(dilation)
    th, tw = dh * (kh - 1), dw * (kw - 1)
    return th // 2, th - th // 2, tw // 2, tw - tw // 2


def zero_stuff(x: Tensor, factor: int, axis: int = -1) -> Tensor:
    """Insert ``factor - 1`` zeros after every sample along ``axis``."""
    axis = axis % x.ndim
    shape = list(x.shape)
    shape[axis] *= factor
    index = [slice(None)] * x.ndim
    index[axis] = slice(None, None, factor)
    index = tuple(index)
    out = np.zeros(shape, dtype=x.dtype)
    out[index] = x.data
    return make(out, (x,), lambda g: (g[index],), "zero_stuff")


def weight_norm(v: Tensor, g: Tensor) -> Tensor:
    """``w[o] = g[o] * v[o] / ||v[o]||`` over every axis but the first."""
    axes = tuple(range(1, v.ndim))
    norm = np.sqrt((v.data * v.data).sum(axis=axes, keepdims=True))
    unit = v.data / norm
    gb = g.data.reshape((-1,) + (1,) * (v.ndim - 1))

    def backward(dw):
        proj = (dw * unit).sum(axis=axes, keepdims=True)
        dv = gb / norm * (dw - unit * proj)
        return dv, proj.reshape(g.shape)

    return make(gb * unit, (v, g), backward, "weight_norm")
