"""Reusable diagnostic suites behind the CLI and the acceptance tests.

* gradient-check suites for the conv layers, sub-band processing and the
  sub-discriminators;
* the impulse probe that exposes inter-octave misalignment of the raw
  octave-stacked CQT;
* the STFT versus CQT bin-spacing table.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .cqt import OctaveCQT, build_octave_plan, cqt_fast, octave_peak_frames
from .discriminators import CQTSubDiscriminator, STFTSubDiscriminator, SubBandProcessing, Trunk
from .dsp import MelConfig, center_frequency, q_factor
from .losses import MelLoss
from .nn import Conv2d, LeakyReLU, TransposedConvTime
from .nn import tensor as T
from .nn.gradcheck import CorruptedBackward, GradcheckReport, Lambda, gradcheck
from .nn.layers import Module
from .nn.spectral import STFTOp, cqt_stack, magnitude

GRADCHECK_TOLERANCE = 1e-3
SUITES = ("conv", "sbp", "disc")


@dataclass(frozen=True)
class GradcheckCase:
    suite: str
    label: str
    build: Callable[[np.random.Generator], tuple[Module, np.ndarray]]
    negative_control: bool = False


class _WithFeatures(Module):
    """Runs a trunk and returns every feature map it records."""

    def __init__(self, trunk: Trunk):
        self.trunk = trunk

    def forward(self, x):
        feats: list = []
        self.trunk(x, feats)
        return feats


def _x(rng, *shape) -> np.ndarray:
    return rng.standard_normal(shape).astype(np.float32)


def _conv(cin, cout, kernel, **kw):
    return lambda rng: (Conv2d(cin, cout, kernel, rng=rng, **kw), _x(rng, 2, cin, 6, 11))


def _cqt_front(rng):
    plan = build_octave_plan(2000.0, 62.5, 4)  # five octaves of four bins, cheap to difference
    op = OctaveCQT([plan], hop=8, compensate_delay=False)
    return Lambda(lambda x: cqt_stack(x, op)), _x(rng, 2, 64)


def _stft_front(rng):
    op = STFTOp(32, 8)
    return Lambda(lambda x: magnitude(op(x))), _x(rng, 2, 80)


def _mel(rng):
    loss = MelLoss(MelConfig(n_fft=64, hop=16, n_mels=8, fmin=0.0, fmax=4000.0, fs=8000.0))
    ref = _x(rng, 2, 160)
    return Lambda(lambda x: loss(ref, x)), _x(rng, 2, 160)


CASES = (
    GradcheckCase("conv", "conv 3x3 same", _conv(2, 3, (3, 3))),
    GradcheckCase("conv", "conv 3x8 even kernel", _conv(2, 3, (3, 8))),
    GradcheckCase("conv", "conv 3x9 stride (2,1) dilation (1,2)", _conv(3, 2, (3, 9), stride=(2, 1), dilation=(1, 2))),
    GradcheckCase("conv", "conv 3x9 dilation (1,4)", _conv(2, 2, (3, 9), dilation=(1, 4))),
    GradcheckCase("conv", "conv 1x7 no weight norm, valid", _conv(3, 4, (1, 7), padding=(0, 0, 0, 0), use_weight_norm=False)),
    GradcheckCase("conv", "transposed conv x4", lambda rng: (TransposedConvTime(3, 2, 4, rng=rng), _x(rng, 2, 3, 1, 5))),
    GradcheckCase("conv", "leaky relu", lambda rng: (LeakyReLU(), _x(rng, 2, 3, 4, 5))),
    GradcheckCase("conv", "tanh", lambda rng: (Lambda(T.tanh), _x(rng, 2, 3, 4))),
    GradcheckCase("conv", "negative control", _conv(2, 3, (3, 3)), negative_control=True),
    GradcheckCase("sbp", "sub-band 3 octaves x 4 bins",
                  lambda rng: (SubBandProcessing(3, 4, 3, rng), _x(rng, 2, 1, 12, 7))),
    GradcheckCase("sbp", "sub-band 5 octaves x 6 bins",
                  lambda rng: (SubBandProcessing(5, 6, 2, rng), _x(rng, 1, 1, 30, 5))),
    GradcheckCase("sbp", "negative control",
                  lambda rng: (SubBandProcessing(3, 4, 3, rng), _x(rng, 2, 1, 12, 7)), negative_control=True),
    GradcheckCase("disc", "trunk features", lambda rng: (_WithFeatures(Trunk(4, 4, rng)), _x(rng, 2, 4, 16, 9))),
    GradcheckCase("disc", "cqt sub-discriminator (sub-band)",
                  lambda rng: (CQTSubDiscriminator(4, 3, 4, 3, True, rng), _x(rng, 2, 2, 12, 9))),
    GradcheckCase("disc", "cqt sub-discriminator (full-band)",
                  lambda rng: (CQTSubDiscriminator(4, 3, 4, 3, False, rng), _x(rng, 2, 2, 12, 9))),
    GradcheckCase("disc", "stft sub-discriminator",
                  lambda rng: (STFTSubDiscriminator(32, 4, rng), _x(rng, 2, 2, 17, 9))),
    GradcheckCase("disc", "cqt front end", _cqt_front),
    GradcheckCase("disc", "stft magnitude", _stft_front),
    GradcheckCase("disc", "mel loss", _mel),
    GradcheckCase("disc", "negative control",
                  lambda rng: (CQTSubDiscriminator(4, 3, 4, 3, True, rng), _x(rng, 2, 2, 12, 9)), negative_control=True),
)


@dataclass(frozen=True)
class GradcheckResult:
    case: GradcheckCase
    report: GradcheckReport

    @property
    def ok(self) -> bool:
        """Regular cases must pass; negative controls must fail."""
        return self.report.passed != self.case.negative_control

    def line(self) -> str:
        tag = " (must fail)" if self.case.negative_control else ""
        return f"[{self.case.suite}] {self.case.label}{tag}: {self.report.summary()} -> {'ok' if self.ok else 'WRONG'}"


def run_gradchecks(suite: str = "all", seed: int = 0, tolerance: float = GRADCHECK_TOLERANCE) -> list[GradcheckResult]:
    if suite != "all" and suite not in SUITES:
        raise ValueError(f"unknown gradcheck suite {suite!r}; choose from all, {', '.join(SUITES)}")
    results = []
    for i, case in enumerate(CASES):
        if suite not in ("all", case.suite):
            continue
        rng = np.random.default_rng([seed, i])
        module, x = case.build(rng)
        if case.negative_control:
            module = CorruptedBackward(module)
        results.append(GradcheckResult(case, gradcheck(module, x, tolerance=tolerance, seed=seed)))
    return results


# ---------------------------------------------------------------------------
# Desynchronisation probe
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DesyncTable:
    bins_per_octave: int
    impulse_frame: float
    peak_frames: np.ndarray  # (n_octaves, B), lowest octave first
    valid: np.ndarray  # (n_octaves, B); False for bins above the input Nyquist, which see no signal

    @property
    def octave_frames(self) -> np.ndarray:
        """Peak frame per octave (the median over its valid bins)."""
        return np.array([int(np.median(f[v])) for f, v in zip(self.peak_frames, self.valid)])

    @property
    def intra_octave_constant(self) -> np.ndarray:
        return np.array([np.all(f[v] == f[v][0]) for f, v in zip(self.peak_frames, self.valid)])

    @property
    def offsets(self) -> np.ndarray:
        """Peak frame of each octave relative to the top octave."""
        f = self.octave_frames
        return f - f[-1]

    @property
    def desynchronized(self) -> bool:
        return bool(np.any(np.abs(self.offsets) >= 1))

    def rows(self) -> list[dict]:
        return [
            {"octave": o + 1, "peak_frame": int(f), "offset_frames": int(d), "intra_octave_constant": bool(c)}
            for o, (f, d, c) in enumerate(zip(self.octave_frames, self.offsets, self.intra_octave_constant))
        ]


def impulse_probe(fs: int = 24000, seconds: float = 2.0) -> tuple[np.ndarray, int]:
    n = int(round(fs * seconds))
    x = np.zeros(n)
    x[n // 2] = 1.0
    return x, n // 2


def chirp_probe(fs: int = 24000, seconds: float = 2.0, f0: float = 40.0, f1: float = 8000.0) -> np.ndarray:
    """Exponential sweep; every octave is crossed in equal time."""
    t = np.arange(int(round(fs * seconds))) / fs
    k = np.log(f1 / f0) / seconds
    return 0.5 * np.sin(2 * np.pi * f0 * (np.exp(k * t) - 1) / k)


def desync_table(bins_per_octave: int = 24, fs: int = 24000, hop: int = 256, seconds: float = 2.0) -> DesyncTable:
    """Peak frames of an impulse in the raw (delay-uncompensated) fast CQT."""
    x, at = impulse_probe(fs, seconds)
    plan = build_octave_plan(fs, bins_per_octave=bins_per_octave)
    spec = cqt_fast(x, plan, hop, compensate_delay=False)
    valid = (np.asarray(plan.freqs) <= fs / 2).reshape(-1, bins_per_octave)
    return DesyncTable(bins_per_octave, at / hop, octave_peak_frames(spec, bins_per_octave), valid)


# ---------------------------------------------------------------------------
# Resolution comparison
# ---------------------------------------------------------------------------

def bin_spacing(fs: float, n_fft: int, f1: float, bins_per_octave: int, n_bins: int) -> list[dict]:
    """STFT bins are ``fs / n_fft`` apart; CQT bandwidths are ``f_k / Q`` and grow geometrically."""
    q = q_factor(bins_per_octave)
    rows = []
    for k in range(1, n_bins + 1):
        f = center_frequency(k, f1, bins_per_octave)
        f_next = center_frequency(k + 1, f1, bins_per_octave)
        rows.append({
            "bin": k,
            "stft_hz": (k - 1) * fs / n_fft,
            "stft_delta_hz": fs / n_fft,
            "cqt_hz": f,
            "cqt_delta_hz": f_next - f,
            "cqt_bandwidth_hz": f / q,
            "cqt_ratio": f_next / f,
        })
    return rows
