"""Differentiable spectral front ends: CQT stack, STFT, magnitude, mel projection."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from ..cqt import OctaveCQT
from ..dsp import hann_window, n_frames_for, reflect_index
from ..errors import ShapeError
from .tensor import Tensor, make, split, reshape


def cqt_stack(x: Tensor, op: OctaveCQT) -> list[Tensor]:
    """``(N, L)`` waveforms to one ``(N, 2, K, T)`` tensor per plan of ``op``."""
    if x.ndim != 2:
        raise ShapeError(f"expected (batch, samples), got {x.shape}")
    n, length = x.shape
    outs = op.forward(x.data)
    shapes = [o.shape for o in outs]
    sizes = [int(np.prod(s[1:])) for s in shapes]
    packed = np.concatenate([o.reshape(n, -1) for o in outs], axis=1).astype(x.dtype)
    cuts = np.cumsum(sizes)[:-1]

    def backward(g):
        parts = [p.reshape(s) for p, s in zip(np.split(g, cuts, axis=1), shapes)]
        return (op.adjoint(parts, length).astype(x.dtype),)

    flat = make(packed, (x,), backward, "cqt")
    return [reshape(p, s) for p, s in zip(split(flat, sizes, axis=1), shapes)]


class STFTOp:
    """Centred, reflect-padded, Hann-windowed STFT as a real ``(N, 2, F, T)`` map."""

    def __init__(self, n_fft: int, hop: int):
        self.n_fft, self.hop = n_fft, hop
        self.window = hann_window(n_fft)
        self._index: dict[int, np.ndarray] = {}

    def index(self, length: int) -> np.ndarray:
        """Sample index read by every (frame, tap), shape ``(T, n_fft)``."""
        if length not in self._index:
            t = n_frames_for(length, self.hop)
            pos = np.arange(t)[:, None] * self.hop + np.arange(self.n_fft)[None, :] - self.n_fft // 2
            self._index[length] = reflect_index(pos, length)
        return self._index[length]

    def forward(self, x: np.ndarray) -> np.ndarray:
        frames = x[..., self.index(x.shape[-1])] * self.window
        spec = np.fft.rfft(frames, axis=-1)  # (N, T, F)
        return np.stack([spec.real, spec.imag], axis=1).transpose(0, 1, 3, 2)

    def adjoint(self, g: np.ndarray, length: int) -> np.ndarray:
        n = g.shape[0]
        gc = (g[:, 0] + 1j * g[:, 1]).transpose(0, 2, 1)  # (N, T, F)
        full = np.zeros(gc.shape[:-1] + (self.n_fft,), dtype=np.complex128)
        full[..., : gc.shape[-1]] = gc
        # sum_k g_re cos - g_im sin = Re(fft(conj(G))) over the one-sided bins
        frames = np.fft.fft(full.conj(), axis=-1).real * self.window
        idx = self.index(length).ravel()
        out = np.empty((n, length))
        for i in range(n):
            out[i] = np.bincount(idx, weights=frames[i].ravel(), minlength=length)
        return out

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 2:
            raise ShapeError(f"expected (batch, samples), got {x.shape}")
        length = x.shape[1]
        y = self.forward(x.data.astype(np.float64)).astype(x.dtype)
        return make(y, (x,), lambda g: (self.adjoint(g, length).astype(x.dtype),), "stft")


def magnitude(z: Tensor) -> Tensor:
    """``(N, 2, F, T)`` real/imag to ``(N, F, T)`` modulus; zero gradient at the origin."""
    if z.ndim != 4 or z.shape[1] != 2:
        raise ShapeError(f"expected (N, 2, F, T), got {z.shape}")
    re, im = z.data[:, 0], z.data[:, 1]
    mag = np.sqrt(re * re + im * im)
    safe = np.where(mag > 0, mag, 1.0)

    def backward(g):
        scale = np.where(mag > 0, g / safe, 0.0)
        return (np.stack([scale * re, scale * im], axis=1).astype(z.dtype),)

    return make(mag, (z,), backward, "magnitude")


def project(matrix: np.ndarray, x: Tensor) -> Tensor:
    """Left-multiply every ``(F, T)`` slice of ``(N, F, T)`` by a fixed ``(M, F)`` matrix."""
    if x.ndim != 3 or x.shape[1] != matrix.shape[1]:
        raise ShapeError(f"matrix {matrix.shape} cannot project input {x.shape}")
    m = matrix.astype(x.dtype)
    return make(np.einsum("mf,nft->nmt", m, x.data), (x,), lambda g: (np.einsum("mf,nmt->nft", m, g),), "project")


__all__ = ["cqt_stack", "STFTOp", "magnitude", "project"]
