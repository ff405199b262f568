"""WAV I/O, an autocorrelation pitch tracker, and MCD / F0RMSE / FPC."""
from __future__ import annotations

import csv
import math
import os
import wave
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.fft import dct

from .dsp import MelConfig, mel_spectrogram
from .errors import FormatError, InvalidInputError, ShapeError

F0_MIN = 50.0
F0_MAX = 1100.0
FRAME_SECONDS = 0.025
MCD_ORDER = 13
MCD_CONST = 10.0 * math.sqrt(2.0) / math.log(10.0)


# ---------------------------------------------------------------------------
# WAV
# ---------------------------------------------------------------------------

def write_wav(path: str | os.PathLike, samples, fs: int) -> None:
    """Mono PCM16; samples are clipped to [-1, 1) and scaled by 32768."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1:
        raise InvalidInputError(f"expected mono samples, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("samples contain non-finite values")
    pcm = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(os.fspath(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(int(fs))
        fh.writeframes(pcm.tobytes())


def read_wav(path: str | os.PathLike) -> tuple[np.ndarray, int]:
    try:
        with wave.open(os.fspath(path), "rb") as fh:
            if fh.getsampwidth() != 2:
                raise FormatError(f"{path}: only 16-bit PCM is supported (sample width {fh.getsampwidth()} bytes)")
            if fh.getnchannels() != 1:
                raise FormatError(f"{path}: only mono is supported ({fh.getnchannels()} channels)")
            fs = fh.getframerate()
            raw = fh.readframes(fh.getnframes())
    except wave.Error as exc:
        raise FormatError(f"{path}: {exc}") from exc
    return np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0, fs


# ---------------------------------------------------------------------------
# Pitch
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PitchTrack:
    f0: np.ndarray  # Hz per frame, 0 where unvoiced
    hop: int
    fs: float

    def __post_init__(self):
        f = np.asarray(self.f0)
        voiced = f[f != 0]
        if np.any(voiced < F0_MIN) or np.any(voiced > F0_MAX):
            raise InvalidInputError(f"voiced f0 values must lie in [{F0_MIN}, {F0_MAX}] Hz")

    @property
    def voiced(self) -> np.ndarray:
        return self.f0 > 0


def estimate_f0(
    signal,
    fs: float,
    hop: int | None = None,
    energy_floor: float = 1e-4,
    voicing_threshold: float = 0.5,
) -> PitchTrack:
    """Normalised-autocorrelation pitch per 25 ms frame.

    The lag search covers [fs/1100, fs/50]. Among lags whose normalised
    correlation reaches 90% of the best one the shortest is taken, which
    keeps sub-harmonic (octave-down) picks out; a parabola through its
    neighbours refines it. Frames with RMS below ``energy_floor`` or peak
    correlation below ``voicing_threshold`` are unvoiced.
    """
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim != 1:
        raise InvalidInputError(f"expected a 1-D signal, got shape {x.shape}")
    win = int(round(FRAME_SECONDS * fs))
    hop = win // 2 if hop is None else int(hop)
    lag_min = max(1, int(math.floor(fs / F0_MAX)))
    lag_max = int(math.ceil(fs / F0_MIN))
    n_frames = 1 + (x.size - win) // hop if x.size >= win else 0
    x = np.concatenate([x, np.zeros(lag_max)])
    f0 = np.zeros(n_frames)
    lags = np.arange(lag_min, lag_max + 1)
    for t in range(n_frames):
        s = t * hop
        a = x[s : s + win]
        if np.sqrt(np.mean(a * a)) < energy_floor:
            continue
        seg = x[s : s + win + lag_max]
        # windows b_l = seg[l : l + win] for each lag
        cross = np.correlate(seg, a, mode="valid")[lags]
        csum = np.concatenate([[0.0], np.cumsum(seg * seg)])
        energy_b = csum[lags + win] - csum[lags]
        nccf = cross / np.sqrt(np.maximum(np.dot(a, a) * energy_b, 1e-20))
        best = nccf.max()
        if best < voicing_threshold:
            continue
        i = int(np.flatnonzero(nccf >= 0.9 * best)[0])
        # climb to the local maximum of that first qualifying peak
        while i + 1 < nccf.size and nccf[i + 1] > nccf[i]:
            i += 1
        lag = float(lags[i])
        if 0 < i < nccf.size - 1:
            y0, y1, y2 = nccf[i - 1], nccf[i], nccf[i + 1]
            den = y0 - 2 * y1 + y2
            if den < 0:
                lag += 0.5 * (y0 - y2) / den
        f = fs / lag
        if F0_MIN <= f <= F0_MAX:
            f0[t] = f
    return PitchTrack(f0, hop, fs)


# ---------------------------------------------------------------------------
# Distances
# ---------------------------------------------------------------------------

def mel_cepstrum(signal, cfg: MelConfig = MelConfig(), order: int = MCD_ORDER) -> np.ndarray:
    """DCT-II (orthonormal) of the log-mel spectrum; coefficients 1..order, shape ``(order, T)``."""
    c = dct(mel_spectrogram(signal, cfg), type=2, norm="ortho", axis=0)
    return c[1 : order + 1]


def mcd_from_cepstra(ref_c: np.ndarray, syn_c: np.ndarray) -> float:
    if ref_c.shape != syn_c.shape:
        raise ShapeError(f"cepstra differ in shape: {ref_c.shape} vs {syn_c.shape}")
    d = ref_c - syn_c
    return float(MCD_CONST * np.mean(np.sqrt(np.sum(d * d, axis=0))))


def mcd(ref, syn, cfg: MelConfig = MelConfig()) -> float:
    """Mel cepstral distortion in dB between equal-length signals (no time warping)."""
    ref, syn = np.asarray(ref, dtype=np.float64), np.asarray(syn, dtype=np.float64)
    if ref.shape != syn.shape:
        raise ShapeError(f"signals differ in shape: {ref.shape} vs {syn.shape}")
    return mcd_from_cepstra(mel_cepstrum(ref, cfg), mel_cepstrum(syn, cfg))


def _joint(ref: PitchTrack | np.ndarray, syn: PitchTrack | np.ndarray):
    a = np.asarray(ref.f0 if isinstance(ref, PitchTrack) else ref, dtype=np.float64)
    b = np.asarray(syn.f0 if isinstance(syn, PitchTrack) else syn, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"pitch tracks differ in length: {a.shape} vs {b.shape}")
    both = (a > 0) & (b > 0)
    return a[both], b[both]


def f0rmse(ref, syn) -> float:
    """RMSE in Hz over jointly voiced frames; ``inf`` when no frame is voiced in both."""
    a, b = _joint(ref, syn)
    if a.size == 0:
        return math.inf
    return float(np.sqrt(np.mean((a - b) ** 2)))


def fpc(ref, syn) -> float:
    """Pearson correlation over jointly voiced frames.

    A constant track has no defined correlation; two identical constant
    tracks are reported as 1.0 and anything else degenerate as ``nan``.
    """
    a, b = _joint(ref, syn)
    if a.size == 0:
        return math.nan
    da, db = a - a.mean(), b - b.mean()
    den = math.sqrt(float(np.dot(da, da)) * float(np.dot(db, db)))
    if den == 0.0:
        return 1.0 if np.array_equal(a, b) else math.nan
    return float(np.clip(np.dot(da, db) / den, -1.0, 1.0))


# ---------------------------------------------------------------------------
# Tables
# ---------------------------------------------------------------------------

METRIC_COLUMNS = ("item", "mcd", "f0rmse", "fpc", "voiced_overlap", "flag")


@dataclass(frozen=True)
class MetricRow:
    item: str
    mcd: float
    f0rmse: float
    fpc: float
    voiced_overlap: int
    flag: str = ""


def score_pair(name: str, ref, syn, fs: float, cfg: MelConfig | None = None) -> MetricRow:
    cfg = MelConfig(fs=fs, fmax=fs / 2) if cfg is None else cfg
    rt, st = estimate_f0(ref, fs), estimate_f0(syn, fs)
    overlap = int(np.sum(rt.voiced & st.voiced))
    flags = []
    if overlap == 0:
        flags.append("no-joint-voicing")
    r = f0rmse(rt, st)
    p = fpc(rt, st)
    if math.isnan(p) and overlap:
        flags.append("fpc-undefined")
    return MetricRow(name, mcd(ref, syn, cfg), r, p, overlap, ";".join(flags))


def summarize(rows: Sequence[MetricRow], name: str = "mean") -> MetricRow:
    """Mean over rows; F0 columns average only finite entries."""
    def finite_mean(vals):
        vals = [v for v in vals if math.isfinite(v)]
        return float(np.mean(vals)) if vals else math.nan

    flagged = sum(1 for r in rows if r.flag)
    return MetricRow(
        name,
        float(np.mean([r.mcd for r in rows])),
        finite_mean([r.f0rmse for r in rows]),
        finite_mean([r.fpc for r in rows]),
        int(sum(r.voiced_overlap for r in rows)),
        f"{flagged}-flagged" if flagged else "",
    )


def write_metric_csv(path: str | os.PathLike, rows: Sequence[MetricRow], extra: dict | None = None) -> None:
    extra = extra or {}
    cols = tuple(extra) + METRIC_COLUMNS
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in rows:
            w.writerow([*extra.values(), r.item, f"{r.mcd:.6f}", f"{r.f0rmse:.6f}", f"{r.fpc:.6f}",
                        r.voiced_overlap, r.flag])
