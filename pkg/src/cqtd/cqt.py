"""Octave-stacked constant-Q transform.

The top octave is analysed at twice the input rate; every lower octave reuses
the same atoms on a signal that has been low-passed and decimated once more.
All stages are linear, so :class:`OctaveCQT` also exposes the exact adjoint,
which is what lets a discriminator pass gradients back to a waveform.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.signal import upfirdn

from .dsp import (
    CQTParams,
    ComplexSpectrogram,
    KernelBank,
    cqt_direct,
    n_frames_for,
    reflect_index,
)
from .errors import InvalidInputError, InvalidParameterError

F1_C1 = 32.7
DEFAULT_HOP = 256
SCALES = (24, 36, 48)

ANTIALIAS_TAPS = 65
INTERP_TAPS = 129
KAISER_BETA = 8.0
# samples (at each level's own rate) kept clear of filter start-up transients
_EDGE_MARGIN = 72


def lowpass(n_taps: int, cutoff: float, beta: float = KAISER_BETA) -> np.ndarray:
    """Kaiser-windowed sinc with unit DC gain; ``cutoff`` in cycles per sample."""
    m = np.arange(n_taps) - (n_taps - 1) / 2
    h = 2 * cutoff * np.sinc(2 * cutoff * m) * np.kaiser(n_taps, beta)
    return h / h.sum()


ANTIALIAS = lowpass(ANTIALIAS_TAPS, 0.25)
INTERPOLATOR = 2.0 * lowpass(INTERP_TAPS, 0.25)
for _h in (ANTIALIAS, INTERPOLATOR):
    _h.setflags(write=False)


# ---------------------------------------------------------------------------
# FIR helpers (batched over leading axes, filtering along the last)
# ---------------------------------------------------------------------------

def _rows(x: np.ndarray) -> np.ndarray:
    return x.reshape(-1, x.shape[-1])


def fir(x: np.ndarray, h: np.ndarray, shift: int) -> np.ndarray:
    """``y[m] = sum_t h[t] x[m - t + shift]`` with zeros outside ``x``; same length as ``x``."""
    n = x.shape[-1]
    flat = _rows(x)
    out = np.empty_like(flat)
    for i, row in enumerate(flat):
        out[i] = np.convolve(row, h)[shift : shift + n]
    return out.reshape(x.shape)


def fir_adjoint(g: np.ndarray, h: np.ndarray, shift: int) -> np.ndarray:
    n = g.shape[-1]
    m = h.size
    flat = _rows(g)
    out = np.empty_like(flat)
    buf = np.zeros(n + m - 1)
    for i, row in enumerate(flat):
        buf[:] = 0.0
        buf[shift : shift + n] = row
        out[i] = np.correlate(buf, h, "valid")
    return out.reshape(g.shape)


def _center_shift(h: np.ndarray) -> int:
    return (h.size - 1) // 2


def _polyphase(h: np.ndarray, x: np.ndarray, up: int, down: int, start: int, length: int) -> np.ndarray:
    """``length`` samples from ``start`` of upsample -> convolve -> downsample, zero beyond the end."""
    y = upfirdn(h, x, up, down, axis=-1)[..., start : start + length]
    if y.shape[-1] < length:
        y = np.concatenate([y, np.zeros(y.shape[:-1] + (length - y.shape[-1],))], axis=-1)
    return y


def upsample_2x(x: np.ndarray) -> np.ndarray:
    """Zero-stuff by two and low-pass: ``fir(stuffed, INTERPOLATOR, centre)``."""
    return _polyphase(INTERPOLATOR, x, 2, 1, _center_shift(INTERPOLATOR), 2 * x.shape[-1])


def upsample_2x_adjoint(g: np.ndarray) -> np.ndarray:
    h = INTERPOLATOR
    lag = h.size - 1 - _center_shift(h)  # even, so the adjoint is a plain polyphase decimation
    return _polyphase(h[::-1], g, 1, 2, lag // 2, g.shape[-1] // 2)


def decimate_2x(x: np.ndarray, compensate_delay: bool = True) -> np.ndarray:
    """``fir(x, ANTIALIAS, shift)[..., ::2]`` computed without the discarded half."""
    shift = _center_shift(ANTIALIAS) if compensate_delay else 0
    return _polyphase(ANTIALIAS, x, 1, 2, shift // 2, -(-x.shape[-1] // 2))


def decimate_2x_adjoint(g: np.ndarray, n_in: int, compensate_delay: bool = True) -> np.ndarray:
    shift = _center_shift(ANTIALIAS) if compensate_delay else 0
    h = ANTIALIAS
    return _polyphase(h[::-1], g, 2, 1, h.size - 1 - shift, n_in)


def _check_signal(signal) -> np.ndarray:
    x = np.asarray(signal, dtype=np.float64)
    if x.size == 0 or x.shape[-1] == 0:
        raise InvalidInputError("signal must be non-empty")
    return x


def resample_2x_up(signal, fs: float) -> tuple[np.ndarray, float]:
    """Windowed-sinc interpolation to twice the sample rate."""
    return upsample_2x(_check_signal(signal)), 2.0 * fs


def downsample_2x(signal, fs: float, compensate_delay: bool = True) -> tuple[np.ndarray, float]:
    """Anti-alias low-pass, then keep every other sample.

    With ``compensate_delay=False`` the filter runs causally and its group
    delay of 32 input samples is left in the output.
    """
    return decimate_2x(_check_signal(signal), compensate_delay), fs / 2.0


# ---------------------------------------------------------------------------
# Plans
# ---------------------------------------------------------------------------

def count_octaves(fs_original: float, f1: float) -> int:
    """Number of octaves starting at ``f1`` whose lowest bin lies strictly below the input Nyquist."""
    nyq = fs_original / 2.0
    if not 0 < f1 < nyq:
        raise InvalidParameterError(f"f1={f1} Hz leaves no octave below Nyquist {nyq} Hz")
    n = 0
    while f1 * 2.0**n < nyq:
        n += 1
    return n


@dataclass(frozen=True, eq=False)
class OctavePlan:
    fs_original: float
    params: CQTParams  # at the working (doubled) rate
    top_bank: KernelBank  # B atoms of the highest octave at the working rate
    octave_rates: tuple  # Hz, lowest octave first
    antialias: np.ndarray
    interpolator: np.ndarray

    @property
    def bins_per_octave(self) -> int:
        return self.params.bins_per_octave

    @property
    def n_octaves(self) -> int:
        return self.params.n_octaves

    @property
    def n_bins(self) -> int:
        return self.params.n_bins

    @property
    def fs_working(self) -> float:
        return self.params.fs

    @property
    def freqs(self) -> np.ndarray:
        return np.concatenate([self.top_bank.freqs / 2.0 ** (self.n_octaves - 1 - o) for o in range(self.n_octaves)])

    def octave_kernels(self, octave: int) -> tuple:
        """Atoms used for ``octave`` (0 = lowest); the same arrays for every octave."""
        if not 0 <= octave < self.n_octaves:
            raise InvalidParameterError(f"octave {octave} outside 0..{self.n_octaves - 1}")
        return self.top_bank.taps

    def reference_bank(self) -> KernelBank:
        """Full-rate atoms equivalent to the stacked ones: lengths doubled once per octave down."""
        lengths = np.concatenate(
            [self.top_bank.lengths * 2 ** (self.n_octaves - 1 - o) for o in range(self.n_octaves)]
        )
        return KernelBank.from_params(self.params, lengths)


def build_octave_plan(fs_original: float, f1: float = F1_C1, bins_per_octave: int = 24) -> OctavePlan:
    n_oct = count_octaves(fs_original, f1)
    fs_w = 2.0 * fs_original
    params = CQTParams(f1, bins_per_octave, fs_w, n_oct, hop=2 * DEFAULT_HOP)
    top = KernelBank.from_params(CQTParams(f1 * 2.0 ** (n_oct - 1), bins_per_octave, fs_w, 1, hop=params.hop))
    rates = tuple(fs_w / 2.0 ** (n_oct - 1 - o) for o in range(n_oct))
    return OctavePlan(fs_original, params, top, rates, ANTIALIAS, INTERPOLATOR)


# ---------------------------------------------------------------------------
# The linear operator
# ---------------------------------------------------------------------------

class _OctaveAtoms:
    """Top-octave atoms laid out in one shared frame, centred on the same sample."""

    def __init__(self, bank: KernelBank):
        halves = [int(n) // 2 for n in bank.lengths]
        self.center = max(halves)
        self.frame = 2 * self.center + 1
        B = bank.n_bins
        basis = np.zeros((self.frame, 2 * B))
        for b, (taps, h) in enumerate(zip(bank.taps, halves)):
            lo = self.center - h
            basis[lo : lo + taps.size, b] = taps.real
            basis[lo : lo + taps.size, B + b] = -taps.imag  # conjugated atom
        self.basis = basis
        self.n_bins = B


@dataclass(frozen=True)
class _Layout:
    length: int  # input samples at the original rate
    n_frames: int
    pad: int  # working-rate samples of reflection on the left
    padded: int  # working-rate length after padding
    level_lengths: tuple


class OctaveCQT:
    """Batched octave-stacked CQT for one or more plans sharing a sample rate.

    ``forward`` maps ``(..., L)`` signals to a list (one entry per plan) of real
    arrays ``(..., 2, K, T)`` holding the real and imaginary parts; bins run
    low to high. ``adjoint`` is its exact transpose.
    """

    def __init__(self, plans: Sequence[OctavePlan], hop: int = DEFAULT_HOP, compensate_delay: bool = True):
        plans = list(plans)
        if not plans:
            raise InvalidParameterError("need at least one plan")
        fs = {p.fs_original for p in plans}
        if len(fs) != 1:
            raise InvalidParameterError(f"plans disagree on sample rate: {sorted(fs)}")
        self.plans = plans
        self.fs = fs.pop()
        self.hop = int(hop)
        if self.hop < 1:
            raise InvalidParameterError("hop must be >= 1")
        self.hop_w = 2 * self.hop
        self.depth = max(p.n_octaves for p in plans) - 1
        if self.hop_w % 2**self.depth:
            raise InvalidParameterError(
                f"working hop {self.hop_w} is not divisible by 2**{self.depth}; octave frames would not align"
            )
        self.compensate_delay = compensate_delay
        self.atoms = [_OctaveAtoms(p.top_bank) for p in plans]
        self._layouts: dict[int, _Layout] = {}

    def layout(self, length: int) -> _Layout:
        if length not in self._layouts:
            scale = 2**self.depth
            center = max(a.center for a in self.atoms)
            pad = scale * (center + _EDGE_MARGIN) + self.hop_w
            n_frames = n_frames_for(length, self.hop)
            right_need = (n_frames - 1) * self.hop_w - (2 * length - 1) + pad + self.hop_w
            padded = pad + 2 * length + max(right_need, pad)
            padded = -(-padded // scale) * scale
            lengths = [padded]
            for _ in range(self.depth):
                lengths.append(-(-lengths[-1] // 2))
            self._layouts[length] = _Layout(length, n_frames, pad, padded, tuple(lengths))
        return self._layouts[length]

    # --- pyramid -----------------------------------------------------------
    def _pyramid(self, x: np.ndarray, lay: _Layout) -> list:
        up = upsample_2x(x)
        idx = reflect_index(np.arange(-lay.pad, lay.padded - lay.pad), up.shape[-1])
        levels = [up[..., idx]]
        for _ in range(self.depth):
            levels.append(decimate_2x(levels[-1], self.compensate_delay))
        return levels

    def _pyramid_adjoint(self, grads: list, lay: _Layout, lead: tuple) -> np.ndarray:
        g = grads[self.depth]
        for d in range(self.depth, 0, -1):
            g = decimate_2x_adjoint(g, lay.level_lengths[d - 1], self.compensate_delay) + grads[d - 1]
        idx = reflect_index(np.arange(-lay.pad, lay.padded - lay.pad), 2 * lay.length)
        flat = _rows(g)
        up_grad = np.empty((flat.shape[0], 2 * lay.length))
        for i, row in enumerate(flat):
            up_grad[i] = np.bincount(idx, weights=row, minlength=2 * lay.length)
        return upsample_2x_adjoint(up_grad).reshape(lead + (lay.length,))

    def _starts(self, lay: _Layout, d: int, atoms: _OctaveAtoms) -> np.ndarray:
        hop_d = self.hop_w >> d
        origin = lay.pad >> d
        return origin - atoms.center + hop_d * np.arange(lay.n_frames)

    # --- public ------------------------------------------------------------
    def forward(self, signal) -> list:
        x = _check_signal(signal)
        lead = x.shape[:-1]
        x = _rows(x)
        lay = self.layout(x.shape[-1])
        levels = self._pyramid(x, lay)
        outs = []
        for plan, atoms in zip(self.plans, self.atoms):
            B = plan.bins_per_octave
            out = np.empty((x.shape[0], 2, plan.n_bins, lay.n_frames))
            span = np.arange(atoms.frame)
            for o in range(plan.n_octaves):
                d = plan.n_octaves - 1 - o
                frames = levels[d][:, self._starts(lay, d, atoms)[:, None] + span]
                y = frames @ atoms.basis  # (n, T, 2B)
                out[:, 0, o * B : (o + 1) * B] = y[..., :B].transpose(0, 2, 1)
                out[:, 1, o * B : (o + 1) * B] = y[..., B:].transpose(0, 2, 1)
            outs.append(out.reshape(lead + out.shape[1:]))
        return outs

    def adjoint(self, grads: Sequence[np.ndarray], length: int) -> np.ndarray:
        lay = self.layout(length)
        lead = np.shape(grads[0])[:-3]
        n = int(np.prod(lead, dtype=np.int64))
        level_grads = [np.zeros((n, m)) for m in lay.level_lengths]
        for plan, atoms, g in zip(self.plans, self.atoms, grads):
            g = np.asarray(g, dtype=np.float64).reshape((n, 2, plan.n_bins, lay.n_frames))
            B = plan.bins_per_octave
            for o in range(plan.n_octaves):
                d = plan.n_octaves - 1 - o
                go = np.concatenate([g[:, 0, o * B : (o + 1) * B], g[:, 1, o * B : (o + 1) * B]], axis=1)
                gf = go.transpose(0, 2, 1) @ atoms.basis.T  # (n, T, frame)
                target = level_grads[d]
                for t, s in enumerate(self._starts(lay, d, atoms)):
                    target[:, s : s + atoms.frame] += gf[:, t]
        return self._pyramid_adjoint(level_grads, lay, lead)


# ---------------------------------------------------------------------------
# Convenience entry points
# ---------------------------------------------------------------------------

def _to_spectrogram(stack: np.ndarray, hop: int, fs: float) -> ComplexSpectrogram:
    return ComplexSpectrogram(stack[0] + 1j * stack[1], hop, fs)


def cqt_fast(signal, plan: OctavePlan, hop: int = DEFAULT_HOP, compensate_delay: bool = True) -> ComplexSpectrogram:
    """Octave-stacked CQT of a 1-D signal at the plan's original rate.

    ``hop`` is in samples at the original rate. With ``compensate_delay=False``
    the anti-alias filters run causally, so each octave down lags a little
    more than the one above it while bins inside an octave stay aligned.
    """
    x = _check_signal(signal)
    if x.ndim != 1:
        raise InvalidInputError(f"expected a 1-D signal, got shape {x.shape}")
    (stack,) = OctaveCQT([plan], hop, compensate_delay).forward(x)
    return _to_spectrogram(stack, hop, plan.fs_original)


def cqt_reference(signal, plan: OctavePlan, hop: int = DEFAULT_HOP) -> ComplexSpectrogram:
    """The direct transform the fast path approximates: full-length atoms on the 2x-interpolated signal."""
    x = _check_signal(signal)
    if x.ndim != 1:
        raise InvalidInputError(f"expected a 1-D signal, got shape {x.shape}")
    spec = cqt_direct(upsample_2x(x), plan.reference_bank(), 2 * hop)
    return ComplexSpectrogram(spec.data, hop, plan.fs_original)


@dataclass(frozen=True, eq=False)
class MultiScaleCQT:
    spectrograms: tuple  # ComplexSpectrogram per scale
    bins_per_octave: tuple
    frame_hop: int

    def __post_init__(self):
        frames = {s.n_frames for s in self.spectrograms}
        if len(frames) != 1:
            raise InvalidInputError(f"scales disagree on frame count: {sorted(frames)}")

    @property
    def n_frames(self) -> int:
        return self.spectrograms[0].n_frames


def multi_scale_cqt(
    signal,
    fs: float,
    scales: Sequence[int] = SCALES,
    hop: int = DEFAULT_HOP,
    f1: float = F1_C1,
    compensate_delay: bool = True,
) -> MultiScaleCQT:
    x = _check_signal(signal)
    if x.ndim != 1:
        raise InvalidInputError(f"expected a 1-D signal, got shape {x.shape}")
    plans = [build_octave_plan(fs, f1, B) for B in scales]
    stacks = OctaveCQT(plans, hop, compensate_delay).forward(x)
    return MultiScaleCQT(tuple(_to_spectrogram(s, hop, fs) for s in stacks), tuple(scales), hop)


def octave_peak_frames(spec: ComplexSpectrogram, bins_per_octave: int) -> np.ndarray:
    """Frame index of maximum magnitude for every bin, shaped ``(n_octaves, B)``."""
    if spec.n_bins % bins_per_octave:
        raise InvalidInputError(f"{spec.n_bins} bins do not split into octaves of {bins_per_octave}")
    return np.argmax(spec.magnitude, axis=1).reshape(-1, bins_per_octave)


def delay_per_octave(plan: OctavePlan) -> np.ndarray:
    """Uncompensated filter delay of each octave in working-rate samples, lowest octave first."""
    per_stage = _center_shift(ANTIALIAS)
    depths = np.arange(plan.n_octaves)[::-1]
    return per_stage * (2.0**depths - 1)


__all__ = [
    "OctavePlan",
    "OctaveCQT",
    "MultiScaleCQT",
    "build_octave_plan",
    "count_octaves",
    "cqt_fast",
    "cqt_reference",
    "multi_scale_cqt",
    "resample_2x_up",
    "downsample_2x",
    "octave_peak_frames",
    "delay_per_octave",
    "lowpass",
]
