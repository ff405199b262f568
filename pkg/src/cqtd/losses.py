"""Least-squares adversarial, feature-matching and mel losses, and their composition.

Each loss accepts tensors (for training) or plain arrays and returns a
:class:`~cqtd.nn.Tensor`; ``float(loss.data)`` gives the value.
"""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dsp import EPS, MelConfig, mel_filterbank, mel_spectrogram
from .errors import InvalidInputError, ShapeError
from .nn import tensor as T
from .nn.spectral import STFTOp, magnitude, project
from .nn.tensor import Tensor, as_tensor

ADV_WEIGHT = 1.0
FM_WEIGHT = 2.0
MEL_WEIGHT = 45.0

LOG_COLUMNS = ("step", "adv_g", "adv_d", "fm", "mel", "total_g", "total_d")
BREAKDOWN_COLUMNS = ("step", "discriminator", "adv_g", "adv_d", "fm")


def _score_list(scores) -> list[Tensor]:
    if isinstance(scores, (Tensor, np.ndarray)):
        return [as_tensor(scores)]
    out = [as_tensor(s) for s in scores]
    if not out:
        raise InvalidInputError("need at least one score map")
    return out


def _sum(terms: list[Tensor]) -> Tensor:
    out = terms[0]
    for t in terms[1:]:
        out = out + t
    return out


def adv_loss_d(real_scores, fake_scores) -> Tensor:
    """``mean((real - 1)^2) + mean(fake^2)``, summed over paired score maps."""
    real, fake = _score_list(real_scores), _score_list(fake_scores)
    if len(real) != len(fake):
        raise ShapeError(f"{len(real)} real score maps but {len(fake)} fake ones")
    return _sum([T.mean(T.square(r - 1.0)) + T.mean(T.square(f)) for r, f in zip(real, fake)])


def adv_loss_g(fake_scores) -> Tensor:
    """``mean((fake - 1)^2)``, summed over score maps."""
    return _sum([T.mean(T.square(f - 1.0)) for f in _score_list(fake_scores)])


def feature_matching_loss(real_feats: Sequence, fake_feats: Sequence) -> Tensor:
    """Mean over layers of the mean absolute difference; real features are treated as constants."""
    real_feats, fake_feats = list(real_feats), list(fake_feats)
    if not real_feats or len(real_feats) != len(fake_feats):
        raise ShapeError(f"feature lists differ in length: {len(real_feats)} vs {len(fake_feats)}")
    terms = []
    for r, f in zip(real_feats, fake_feats):
        r, f = as_tensor(r), as_tensor(f)
        if r.shape != f.shape:
            raise ShapeError(f"feature shapes differ: {r.shape} vs {f.shape}")
        terms.append(T.mean(T.absolute(f - Tensor(r.data))))
    return T.mul(_sum(terms), 1.0 / len(terms))


class MelLoss:
    """Differentiable L1 between log-mel spectrograms of ``(N, L)`` batches."""

    def __init__(self, cfg: MelConfig = MelConfig()):
        self.cfg = cfg
        self.stft = STFTOp(cfg.n_fft, cfg.hop)
        self.fbank = mel_filterbank(cfg)

    def log_mel(self, wave: Tensor) -> Tensor:
        return T.log_clamp(project(self.fbank, magnitude(self.stft(wave))), EPS)

    def __call__(self, ref, syn) -> Tensor:
        ref_mel = self.log_mel(Tensor(np.atleast_2d(np.asarray(ref.data if isinstance(ref, Tensor) else ref))))
        syn = syn if isinstance(syn, Tensor) else Tensor(np.atleast_2d(np.asarray(syn, dtype=np.float64)))
        if ref_mel.shape[0] != syn.shape[0] or syn.ndim != 2:
            raise ShapeError(f"reference batch {ref_mel.shape} and synthesis {syn.shape} disagree")
        syn_mel = self.log_mel(syn)
        if syn_mel.shape != ref_mel.shape:
            raise ShapeError(f"mel shapes differ: {ref_mel.shape} vs {syn_mel.shape}")
        return T.mean(T.absolute(syn_mel - Tensor(ref_mel.data.astype(syn_mel.dtype))))


def mel_loss(ref_wav, syn_wav, cfg: MelConfig = MelConfig()) -> float:
    """L1 distance between log-mel spectrograms of two equal-length signals."""
    ref_wav, syn_wav = np.asarray(ref_wav, dtype=np.float64), np.asarray(syn_wav, dtype=np.float64)
    if ref_wav.shape != syn_wav.shape:
        raise ShapeError(f"signals differ in shape: {ref_wav.shape} vs {syn_wav.shape}")
    return float(np.mean(np.abs(mel_spectrogram(ref_wav, cfg) - mel_spectrogram(syn_wav, cfg))))


# ---------------------------------------------------------------------------
# Composition
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DiscriminatorTerms:
    name: str
    adv_g: float
    adv_d: float
    fm: float

    @property
    def generator_part(self) -> float:
        return ADV_WEIGHT * self.adv_g + FM_WEIGHT * self.fm


@dataclass(frozen=True)
class LossReport:
    adv_g: float
    adv_d: float
    fm: float
    mel: float
    total_g: float
    total_d: float
    breakdown: tuple = field(default_factory=tuple)

    def row(self, step: int) -> dict:
        return {"step": step, "adv_g": self.adv_g, "adv_d": self.adv_d, "fm": self.fm, "mel": self.mel,
                "total_g": self.total_g, "total_d": self.total_d}


def compose_losses(per_disc: Sequence[DiscriminatorTerms], mel: float) -> LossReport:
    """``total_g = sum(adv_g + 2 fm) + 45 mel`` and ``total_d = sum(adv_d)``.

    Sums run in the given order so that appending a discriminator adds
    exactly its own terms.
    """
    per_disc = tuple(per_disc)
    adv_g = adv_d = fm = 0.0
    total_g = MEL_WEIGHT * mel
    for d in per_disc:
        adv_g += d.adv_g
        adv_d += d.adv_d
        fm += d.fm
        total_g += d.generator_part
    return LossReport(adv_g, adv_d, fm, mel, total_g, adv_d, per_disc)


# ---------------------------------------------------------------------------
# CSV logs
# ---------------------------------------------------------------------------

def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


class LossLog:
    """Appends one row per step to the main log and one per discriminator to the breakdown log."""

    def __init__(self, path: str | os.PathLike, breakdown_path: str | os.PathLike | None = None):
        self.path = path
        self.breakdown_path = breakdown_path
        with open(path, "w", newline="") as fh:
            csv.writer(fh).writerow(LOG_COLUMNS)
        if breakdown_path is not None:
            with open(breakdown_path, "w", newline="") as fh:
                csv.writer(fh).writerow(BREAKDOWN_COLUMNS)

    def append(self, step: int, report: LossReport) -> None:
        row = report.row(step)
        with open(self.path, "a", newline="") as fh:
            csv.writer(fh).writerow([_fmt(row[c]) for c in LOG_COLUMNS])
        if self.breakdown_path is not None:
            with open(self.breakdown_path, "a", newline="") as fh:
                w = csv.writer(fh)
                for d in report.breakdown:
                    w.writerow([step, d.name, _fmt(d.adv_g), _fmt(d.adv_d), _fmt(d.fm)])


def read_loss_log(path: str | os.PathLike) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [{k: (int(v) if k == "step" else v if k == "discriminator" else float(v)) for k, v in r.items()}
            for r in rows]
