"""Reference signal-processing layer: windows, CQT kernels, direct CQT, DFT/STFT, mel.

Everything here runs in double precision and favours clarity over speed; the
fast octave-stacked transform in :mod:`cqtd.cqt` is checked against it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import InvalidInputError, InvalidParameterError

EPS = 1e-5


# ---------------------------------------------------------------------------
# Constant-Q structure
# ---------------------------------------------------------------------------

def q_factor(bins_per_octave: int) -> float:
    """Constant ratio of centre frequency to bandwidth for ``B`` bins per octave."""
    if int(bins_per_octave) != bins_per_octave or bins_per_octave < 1:
        raise InvalidParameterError(f"bins_per_octave must be a positive integer, got {bins_per_octave!r}")
    # expm1 avoids the cancellation in 2**(1/B) - 1 for large B
    return 1.0 / math.expm1(math.log(2.0) / bins_per_octave)


def center_frequency(k: int, f1: float, bins_per_octave: int) -> float:
    """Centre frequency of 1-based bin ``k``.

    The octave part is applied as an exact power of two so bins one octave
    apart differ by a factor of exactly 2.
    """
    if k < 1:
        raise InvalidParameterError(f"bin index is 1-based, got k={k}")
    if f1 <= 0:
        raise InvalidParameterError(f"f1 must be positive, got {f1}")
    if bins_per_octave < 1:
        raise InvalidParameterError(f"bins_per_octave must be >= 1, got {bins_per_octave}")
    octave, b = divmod(k - 1, bins_per_octave)
    return f1 * 2.0 ** (b / bins_per_octave) * 2.0**octave


def window_length(f_k: float, fs: float, bins_per_octave: int) -> int:
    """Kernel length in samples, rounded half-up."""
    if not 0 < f_k < fs / 2:
        raise InvalidParameterError(f"centre frequency {f_k} Hz must lie in (0, fs/2={fs / 2})")
    n = fs / f_k * q_factor(bins_per_octave)
    return max(1, int(math.floor(n + 0.5)))


def hann(t: np.ndarray | float) -> np.ndarray:
    """Hann window on the unit interval, zero at both ends."""
    t = np.asarray(t, dtype=np.float64)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * t)


def kernel_function(t: np.ndarray, n_k: int, q: float) -> np.ndarray:
    """Continuous CQT atom evaluated at (possibly fractional) sample positions ``t``."""
    t = np.asarray(t, dtype=np.float64)
    return hann(t / n_k) * np.exp(-2j * np.pi * t * q / n_k) / n_k


def centered_taps(n_k: int, q: float) -> np.ndarray:
    """Taps that the direct transform correlates against, one per summation index.

    The sum runs over ``2*floor(N/2) + 1`` samples centred on the frame and the
    atom is sampled at ``j - n + N/2``; for odd ``N`` that lands on half-integer
    positions, which keeps every atom centred exactly on its frame.
    """
    half = n_k // 2
    t = np.arange(2 * half + 1, dtype=np.float64) + (n_k / 2.0 - half)
    return kernel_function(t, n_k, q)


@dataclass(frozen=True)
class CQTParams:
    f1: float
    bins_per_octave: int
    fs: float
    n_octaves: int
    hop: int = 256

    def __post_init__(self):
        if self.f1 <= 0:
            raise InvalidParameterError(f"f1 must be positive, got {self.f1}")
        if int(self.bins_per_octave) != self.bins_per_octave or self.bins_per_octave < 1:
            raise InvalidParameterError(f"bins_per_octave must be a positive integer, got {self.bins_per_octave}")
        if self.n_octaves < 1:
            raise InvalidParameterError(f"n_octaves must be >= 1, got {self.n_octaves}")
        if self.hop < 1:
            raise InvalidParameterError(f"hop must be >= 1, got {self.hop}")
        top = self.f1 * 2.0 ** (self.n_octaves - 1.0 / self.bins_per_octave)
        if top >= self.fs / 2:
            raise InvalidParameterError(
                f"top bin {top:.1f} Hz is not below Nyquist {self.fs / 2:.1f} Hz"
            )

    @property
    def n_bins(self) -> int:
        return self.bins_per_octave * self.n_octaves


def make_kernel(k: int, params: CQTParams) -> np.ndarray:
    """Complex atom of bin ``k`` sampled at integer positions ``0..N_k-1``."""
    if not 1 <= k <= params.n_bins:
        raise InvalidParameterError(f"bin {k} outside 1..{params.n_bins}")
    f_k = center_frequency(k, params.f1, params.bins_per_octave)
    n_k = window_length(f_k, params.fs, params.bins_per_octave)
    return kernel_function(np.arange(n_k), n_k, q_factor(params.bins_per_octave))


@dataclass(frozen=True, eq=False)
class KernelBank:
    """Per-bin atoms of a constant-Q analysis, lowest bin first.

    ``lengths`` default to the rounded window length of each bin; callers may
    pass their own (the octave-stacked transform dilates its top octave).
    """

    params: CQTParams
    freqs: np.ndarray
    lengths: np.ndarray
    q: float
    kernels: tuple = field(repr=False)

    @classmethod
    def from_params(cls, params: CQTParams, lengths=None) -> "KernelBank":
        B = params.bins_per_octave
        base = params.f1 * 2.0 ** (np.arange(B) / B)
        freqs = np.concatenate([base * 2.0**o for o in range(params.n_octaves)])
        q = q_factor(B)
        if lengths is None:
            lengths = [window_length(f, params.fs, B) for f in freqs]
        lengths = np.asarray(lengths, dtype=np.int64)
        if lengths.shape != freqs.shape:
            raise InvalidParameterError(f"expected {freqs.size} window lengths, got {lengths.size}")
        if np.any(lengths < 1):
            raise InvalidParameterError("window lengths must be >= 1")
        kernels = tuple(kernel_function(np.arange(n), int(n), q) for n in lengths)
        for a in (freqs, lengths):
            a.setflags(write=False)
        return cls(params, freqs, lengths, q, kernels)

    @property
    def n_bins(self) -> int:
        return self.freqs.size

    @property
    def bandwidths(self) -> np.ndarray:
        return self.freqs / self.q

    @cached_property
    def taps(self) -> tuple:
        return tuple(centered_taps(int(n), self.q) for n in self.lengths)


@dataclass(frozen=True, eq=False)
class ComplexSpectrogram:
    data: np.ndarray  # (n_bins, n_frames), complex
    frame_hop: int
    fs: float

    def __post_init__(self):
        if self.data.ndim != 2:
            raise InvalidInputError(f"spectrogram data must be 2-D, got shape {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise InvalidInputError("spectrogram contains non-finite values")

    @property
    def n_bins(self) -> int:
        return self.data.shape[0]

    @property
    def n_frames(self) -> int:
        return self.data.shape[1]

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.data)


# ---------------------------------------------------------------------------
# Direct transform
# ---------------------------------------------------------------------------

def reflect_index(idx: np.ndarray, length: int) -> np.ndarray:
    """Map arbitrary integer positions into ``[0, length)`` by mirror reflection (no edge repeat)."""
    idx = np.asarray(idx)
    if length == 1:
        return np.zeros_like(idx)
    period = 2 * (length - 1)
    m = np.mod(idx, period)
    return np.where(m >= length, period - m, m)


def reflect_extend(x: np.ndarray, left: int, right: int) -> np.ndarray:
    """Reflect-pad the last axis; unlike ``np.pad`` the pad may exceed the signal length."""
    n = x.shape[-1]
    idx = reflect_index(np.arange(-left, n + right), n)
    return x[..., idx]


def n_frames_for(length: int, hop: int) -> int:
    return max(1, -(-length // hop))


def _check_signal(signal) -> np.ndarray:
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise InvalidInputError(f"expected a non-empty 1-D signal, got shape {x.shape}")
    return x


def correlate_frames(ext: np.ndarray, start: int, taps: np.ndarray, hop: int, n_frames: int) -> np.ndarray:
    """``out[n] = sum_m ext[start + n*hop + m] * conj(taps[m])`` for ``n < n_frames``.

    Written as one block matrix product plus a diagonal sum so that long taps
    and small hops stay cheap; the result is the plain sum, nothing is dropped.
    """
    n_blocks = -(-taps.size // hop)
    padded = np.zeros(n_blocks * hop, dtype=np.complex128)
    padded[: taps.size] = taps
    t = padded.reshape(n_blocks, hop)
    rows = n_frames + n_blocks - 1
    seg = ext[start : start + rows * hop]
    if seg.size < rows * hop:
        seg = np.concatenate([seg, np.zeros(rows * hop - seg.size)])
    w = seg.reshape(rows, hop)
    basis = np.ascontiguousarray(np.concatenate([t.real, t.imag]).T)
    yr, yi = np.split(w @ basis, 2, axis=1)
    y = yr - 1j * yi
    n = np.arange(n_frames)[:, None]
    q = np.arange(n_blocks)[None, :]
    return y[n + q, q].sum(axis=1)


def cqt_direct(signal, bank: KernelBank, hop: int | None = None) -> ComplexSpectrogram:
    """Constant-Q transform evaluated straight from its defining sum.

    Frames are centred at ``n * hop`` and the signal is reflect-padded so the
    widest atom always sees data.
    """
    x = _check_signal(signal)
    hop = bank.params.hop if hop is None else int(hop)
    if hop < 1:
        raise InvalidParameterError(f"hop must be >= 1, got {hop}")
    n_frames = n_frames_for(x.size, hop)
    halves = bank.lengths // 2
    left = int(halves.max())
    longest = int(max(t.size for t in bank.taps))
    right = n_frames * hop + longest + 2 * hop
    ext = reflect_extend(x, left, right)
    out = np.empty((bank.n_bins, n_frames), dtype=np.complex128)
    for k, taps in enumerate(bank.taps):
        out[k] = correlate_frames(ext, left - int(halves[k]), taps, hop, n_frames)
    return ComplexSpectrogram(out, hop, bank.params.fs)


# ---------------------------------------------------------------------------
# Fourier analysis
# ---------------------------------------------------------------------------

def dft(signal) -> np.ndarray:
    return np.fft.fft(np.asarray(signal, dtype=np.complex128))


def idft(spectrum) -> np.ndarray:
    return np.fft.ifft(np.asarray(spectrum, dtype=np.complex128))


def hann_window(n: int) -> np.ndarray:
    """Periodic Hann window of length ``n``."""
    return hann(np.arange(n) / n)


def frame_signal(x: np.ndarray, n_fft: int, hop: int) -> np.ndarray:
    """Centred, reflect-padded frames along the last axis: ``(..., n_frames, n_fft)``."""
    n_frames = n_frames_for(x.shape[-1], hop)
    pad = n_fft // 2
    ext = reflect_extend(x, pad, n_frames * hop + n_fft)
    idx = np.arange(n_frames)[:, None] * hop + np.arange(n_fft)[None, :]
    return ext[..., idx]


def stft(signal, n_fft: int = 1024, hop: int = 256, window=None, fs: float = 1.0) -> ComplexSpectrogram:
    if n_fft < hop:
        raise InvalidParameterError(f"n_fft ({n_fft}) must be >= hop ({hop})")
    x = _check_signal(signal)
    win = hann_window(n_fft) if window is None else np.asarray(window, dtype=np.float64)
    if win.shape != (n_fft,):
        raise InvalidParameterError(f"window must have length {n_fft}")
    frames = frame_signal(x, n_fft, hop) * win
    return ComplexSpectrogram(np.fft.rfft(frames, axis=-1).T, hop, fs)


# ---------------------------------------------------------------------------
# Mel
# ---------------------------------------------------------------------------

_F_SP = 200.0 / 3
_MIN_LOG_HZ = 1000.0
_MIN_LOG_MEL = _MIN_LOG_HZ / _F_SP
_LOGSTEP = math.log(6.4) / 27.0


def hz_to_mel(f):
    """Slaney mel scale: linear below 1 kHz, logarithmic above."""
    f = np.asarray(f, dtype=np.float64)
    lin = f / _F_SP
    log = _MIN_LOG_MEL + np.log(np.maximum(f, _MIN_LOG_HZ) / _MIN_LOG_HZ) / _LOGSTEP
    return np.where(f >= _MIN_LOG_HZ, log, lin)


def mel_to_hz(m):
    m = np.asarray(m, dtype=np.float64)
    lin = _F_SP * m
    log = _MIN_LOG_HZ * np.exp(_LOGSTEP * (np.maximum(m, _MIN_LOG_MEL) - _MIN_LOG_MEL))
    return np.where(m >= _MIN_LOG_MEL, log, lin)


@dataclass(frozen=True)
class MelConfig:
    n_fft: int = 1024
    hop: int = 256
    n_mels: int = 80
    fmin: float = 0.0
    fmax: float = 12000.0
    fs: float = 24000.0

    def __post_init__(self):
        if self.n_mels < 1:
            raise InvalidParameterError("n_mels must be >= 1")
        if not 0 <= self.fmin < self.fmax <= self.fs / 2:
            raise InvalidParameterError(
                f"need 0 <= fmin < fmax <= fs/2, got fmin={self.fmin}, fmax={self.fmax}, fs={self.fs}"
            )
        if self.n_fft < self.hop:
            raise InvalidParameterError("n_fft must be >= hop")


def mel_edges(cfg: MelConfig) -> np.ndarray:
    """Lower edge, centre and upper edge frequencies (Hz) of every triangle, as ``n_mels + 2`` points."""
    return mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.n_mels + 2))


def mel_filterbank(cfg: MelConfig) -> np.ndarray:
    """Triangular filters with Slaney area normalisation, shape ``(n_mels, n_fft//2 + 1)``."""
    fft_freqs = np.fft.rfftfreq(cfg.n_fft, 1.0 / cfg.fs)
    edges = mel_edges(cfg)
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (fft_freqs[None, :] - lo) / (mid - lo)
    down = (hi - fft_freqs[None, :]) / (hi - mid)
    tri = np.maximum(0.0, np.minimum(up, down))
    return tri * (2.0 / (hi - lo))


def mel_spectrogram(signal, cfg: MelConfig = MelConfig()) -> np.ndarray:
    """Log-magnitude mel spectrogram, shape ``(n_mels, n_frames)``."""
    spec = stft(signal, cfg.n_fft, cfg.hop, fs=cfg.fs)
    mel = mel_filterbank(cfg) @ np.abs(spec.data)
    return np.log(np.maximum(mel, EPS))
