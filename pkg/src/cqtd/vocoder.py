"""Tiny mel-to-waveform generator, synthetic harmonic data, and the adversarial loop."""
from __future__ import annotations

import logging
import math
import os
import time
from dataclasses import dataclass, field, fields
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .discriminators import DiscriminatorConfig, MultiScaleDiscriminator
from .dsp import MelConfig, mel_spectrogram
from .errors import DivergenceError, InvalidParameterError, NonFiniteError, ShapeError
from .formats import dump_kv, load_kv
from .losses import (
    DiscriminatorTerms, LossLog, LossReport, MelLoss, adv_loss_d, adv_loss_g, compose_losses,
    feature_matching_loss,
)
from .metrics import MetricRow, score_pair, summarize
from .nn import tensor as T
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .nn.layers import Conv2d, LeakyReLU, Module, TransposedConvTime
from .nn.optim import Adam
from .nn.tensor import Tensor, no_grad

log = logging.getLogger(__name__)

FS = 24000
HOP = 256
ITEM_SECONDS = 0.5
N_MELS = 80
MEL = MelConfig(n_fft=1024, hop=HOP, n_mels=N_MELS, fmin=0.0, fmax=FS / 2, fs=FS)
F0_RANGE = (80.0, 600.0)

# discriminator set name -> kind
DISCRIMINATOR_SETS = {"C": "ms-sb-cqt", "S": "ms-stft", "MS-CQT": "ms-cqt"}


# ---------------------------------------------------------------------------
# Generator
# ---------------------------------------------------------------------------

class ToyGenerator(Module):
    """conv_pre, then four x4 upsampling stages (each followed by a 1x7 conv), conv_post, tanh.

    Mels enter as ``(N, n_mels, T)``; the waveform leaves as ``(N, 256 T)``.
    """

    def __init__(self, n_mels: int = N_MELS, channels: Sequence[int] = (64, 48, 32, 16, 8), rng=None):
        rng = np.random.default_rng(0) if rng is None else rng
        self.n_mels = n_mels
        self.conv_pre = Conv2d(n_mels, channels[0], (1, 7), rng=rng)
        self.ups = [TransposedConvTime(a, b, 4, 8, rng=rng) for a, b in zip(channels[:-1], channels[1:])]
        self.refine = [Conv2d(c, c, (1, 7), rng=rng) for c in channels[1:]]
        self.conv_post = Conv2d(channels[-1], 1, (1, 7), rng=rng)
        self.act = LeakyReLU()
        self.upsample = 4 ** len(self.ups)

    def forward(self, mel) -> Tensor:
        mel = mel if isinstance(mel, Tensor) else Tensor(np.asarray(mel, dtype=np.float32))
        if mel.ndim != 3 or mel.shape[1] != self.n_mels:
            raise ShapeError(f"expected (N, {self.n_mels}, frames) mel input, got {mel.shape}")
        n, _, frames = mel.shape
        h = self.conv_pre(T.reshape(mel, (n, self.n_mels, 1, frames)))
        for up, refine in zip(self.ups, self.refine):
            h = self.act(up(self.act(h)))
            h = refine(h)
        y = T.tanh(self.conv_post(self.act(h)))
        return T.reshape(y, (n, frames * self.upsample))


# ---------------------------------------------------------------------------
# Data
# ---------------------------------------------------------------------------

class SynthItem(NamedTuple):
    wave: np.ndarray
    mel: np.ndarray
    f0: float


def synth_tone(rng: np.random.Generator, fs: int = FS, seconds: float = ITEM_SECONDS) -> tuple[np.ndarray, float]:
    """Harmonic tone with vibrato and an attack/decay envelope."""
    n = int(round(fs * seconds))
    t = np.arange(n) / fs
    f0 = rng.uniform(*F0_RANGE)
    n_harm = int(rng.integers(1, 9))
    vib_rate = rng.uniform(4.0, 7.0)
    vib_depth = rng.uniform(0.0, 0.02) * f0
    inst = f0 + vib_depth * np.sin(2 * np.pi * vib_rate * t + rng.uniform(0, 2 * np.pi))
    phase = 2 * np.pi * np.cumsum(inst) / fs
    x = np.zeros(n)
    for h in range(1, n_harm + 1):
        if (f0 + vib_depth) * h >= 0.45 * fs:
            break
        x += rng.uniform(0.3, 1.0) / h * np.sin(h * phase + rng.uniform(0, 2 * np.pi))
    attack = rng.uniform(0.01, 0.05)
    decay = rng.uniform(0.3, 2.0)
    env = np.minimum(t / attack, 1.0) * np.exp(-t / decay)
    x *= env
    peak = np.abs(x).max()
    return x * (rng.uniform(0.3, 0.7) / peak), f0


def synth_dataset(seed: int, n_items: int, fs: int = FS) -> list[SynthItem]:
    """Items are seeded independently from ``(seed, index)``, so any subset is reproducible."""
    if n_items < 0:
        raise InvalidParameterError("n_items must be >= 0")
    items = []
    for i in range(n_items):
        wave, f0 = synth_tone(np.random.default_rng([seed, i]), fs)
        items.append(SynthItem(wave, mel_spectrogram(wave, MEL), f0))
    return items


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    seed: int = 0
    steps: int = 500
    batch: int = 8
    lr_g: float = 2e-4
    lr_d: float = 2e-4
    beta1: float = 0.8
    beta2: float = 0.99
    discriminators: str = "C"
    n_items: int = 64
    heldout_items: int = 8
    segment_frames: int = 8
    d_channels: int = 8
    sbp_channels: int = 4
    d_input_gain: float = 100.0
    log_every: int = 50

    def __post_init__(self):
        if self.steps < 1:
            raise InvalidParameterError(f"steps must be >= 1, got {self.steps}")
        if self.batch < 1:
            raise InvalidParameterError(f"batch must be >= 1, got {self.batch}")
        if self.lr_g <= 0 or self.lr_d <= 0:
            raise InvalidParameterError("learning rates must be positive")
        if self.n_items < 1 or self.heldout_items < 1:
            raise InvalidParameterError("need at least one training and one held-out item")
        item_frames = int(round(FS * ITEM_SECONDS)) // HOP
        if not 1 <= self.segment_frames <= item_frames:
            raise InvalidParameterError(f"segment_frames must lie in [1, {item_frames}]")
        self.discriminator_set  # validates

    @property
    def discriminator_set(self) -> tuple[str, ...]:
        names = tuple(s.strip().upper() for s in self.discriminators.split("+") if s.strip())
        if not names:
            raise InvalidParameterError("select at least one discriminator")
        for s in names:
            if s not in DISCRIMINATOR_SETS:
                raise InvalidParameterError(f"unknown discriminator {s!r}; choose from {sorted(DISCRIMINATOR_SETS)}")
        if len(set(names)) != len(names):
            raise InvalidParameterError(f"discriminator listed twice in {self.discriminators!r}")
        return names

    def to_kv(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_kv(cls, kv: dict, env: dict | None = None) -> "TrainConfig":
        """Build from string values; ``CQTD_SEED`` in ``env`` (default ``os.environ``) overrides the seed."""
        names = {f.name: f for f in fields(cls)}
        unknown = set(kv) - set(names)
        if unknown:
            raise InvalidParameterError(f"unknown config keys: {sorted(unknown)}")
        args = {}
        for key, raw in kv.items():
            kind = type(getattr(cls, key))
            try:
                args[key] = kind(raw) if kind is not int else int(str(raw), 10)
            except ValueError as exc:
                raise InvalidParameterError(f"config key {key!r}: cannot parse {raw!r}") from exc
        env = os.environ if env is None else env
        if env.get("CQTD_SEED"):
            try:
                args["seed"] = int(env["CQTD_SEED"])
            except ValueError as exc:
                raise InvalidParameterError(f"CQTD_SEED must be an integer, got {env['CQTD_SEED']!r}") from exc
        return cls(**args)

    @classmethod
    def load(cls, path, env: dict | None = None) -> "TrainConfig":
        return cls.from_kv(load_kv(path), env)


@dataclass
class TrainResult:
    config: TrainConfig
    reports: list
    generator: ToyGenerator
    discriminators: dict
    heldout_accuracy: float
    seconds: float
    paths: dict = field(default_factory=dict)

    @property
    def mel_curve(self) -> np.ndarray:
        return np.array([r.mel for r in self.reports])


def _streams(seed: int):
    g, d, data, batches = np.random.SeedSequence(seed).spawn(4)
    return g, d, int(data.generate_state(1)[0]), np.random.default_rng(batches)


def build_discriminators(config: TrainConfig, d_seq: np.random.SeedSequence) -> dict:
    out = {}
    for name, child in zip(config.discriminator_set, d_seq.spawn(len(config.discriminator_set))):
        cfg = DiscriminatorConfig(kind=DISCRIMINATOR_SETS[name], channels=config.d_channels,
                                  sbp_channels=config.sbp_channels, fs=FS, hop=HOP,
                                  input_gain=config.d_input_gain)
        out[name] = MultiScaleDiscriminator(cfg, rng=np.random.default_rng(child))
    return out


def _scores(outputs) -> list[Tensor]:
    return [o.score for o in outputs]


def _score_means(outputs_by_disc: Sequence) -> np.ndarray:
    """Per-example mean of every score map of every discriminator."""
    per = [o.score.data.reshape(o.score.shape[0], -1).mean(axis=1) for outs in outputs_by_disc for o in outs]
    return np.mean(per, axis=0)


def heldout_segments(items: Sequence[SynthItem], frames: int) -> tuple[np.ndarray, np.ndarray]:
    """Every non-overlapping ``frames``-frame crop of every item, shaped like a training batch."""
    whole = items[0].wave.size // HOP
    starts = range(0, whole - frames + 1, frames)
    mels = np.stack([it.mel[:, s : s + frames] for it in items for s in starts])
    waves = np.stack([it.wave[s * HOP : (s + frames) * HOP] for it in items for s in starts])
    return mels.astype(np.float32), waves.astype(np.float32)


def discriminator_accuracy(generator: ToyGenerator, discs: dict, items: Sequence[SynthItem], frames: int) -> float:
    """Fraction of real and generated held-out segments on the right side of 0.5.

    Segments have the training crop length, so the discriminators are judged
    on inputs shaped like those they were trained on.
    """
    mels, waves = heldout_segments(items, frames)
    with no_grad():
        fake = generator(mels)
        real_out = [d(Tensor(waves)) for d in discs.values()]
        fake_out = [d(fake) for d in discs.values()]
    real_ok = _score_means(real_out) > 0.5
    fake_ok = _score_means(fake_out) < 0.5
    return float((real_ok.sum() + fake_ok.sum()) / (2 * len(waves)))


def _batch(items: Sequence[SynthItem], rng: np.random.Generator, batch: int, frames: int):
    idx = rng.integers(0, len(items), size=batch)
    whole = items[0].wave.size // HOP  # frames whose full hop lies inside the item
    starts = rng.integers(0, max(whole - frames, 0) + 1, size=batch)
    mels = np.stack([items[i].mel[:, s : s + frames] for i, s in zip(idx, starts)])
    waves = np.stack([items[i].wave[s * HOP : (s + frames) * HOP] for i, s in zip(idx, starts)])
    return mels.astype(np.float32), waves.astype(np.float32)


def train(
    config: TrainConfig,
    out_dir: str | os.PathLike | None = None,
    progress: Callable[[int, LossReport], None] | None = None,
) -> TrainResult:
    """Alternating D-step / G-step training with Adam.

    Every step draws ``batch`` random ``segment_frames``-frame crops. The D
    step scores real crops against detached generator output; the G step
    then scores the same output with the updated discriminators.
    """
    t0 = time.perf_counter()
    g_seq, d_seq, data_seed, batch_rng = _streams(config.seed)
    items = synth_dataset(data_seed, config.n_items)
    heldout = synth_dataset(data_seed + 1, config.heldout_items)
    gen = ToyGenerator(rng=np.random.default_rng(g_seq))
    discs = build_discriminators(config, d_seq)
    betas = (config.beta1, config.beta2)
    opt_g = Adam(gen.parameters(), config.lr_g, betas)
    opt_d = {k: Adam(d.parameters(), config.lr_d, betas) for k, d in discs.items()}
    mel_loss = MelLoss(MEL)

    paths = {}
    logger = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        paths = {
            "config": os.path.join(out_dir, "config.txt"),
            "log": os.path.join(out_dir, "losses.csv"),
            "breakdown": os.path.join(out_dir, "losses_by_discriminator.csv"),
            "generator": os.path.join(out_dir, "generator.nnck"),
        }
        dump_kv(config.to_kv(), paths["config"])
        logger = LossLog(paths["log"], paths["breakdown"])

    reports = []
    for step in range(1, config.steps + 1):
        mels, waves = _batch(items, batch_rng, config.batch, config.segment_frames)
        real = Tensor(waves)
        try:
            fake = gen(mels)
            real_specs, fake_specs = {}, {}
            adv_d = {}
            # discriminator step
            for name, d in discs.items():
                with no_grad():
                    real_specs[name] = d.spectra(real)
                fake_specs[name] = d.spectra(fake)
                d.zero_grad()
                loss_d = adv_loss_d(_scores(d(real_specs[name])),
                                    _scores(d([Tensor(s.data) for s in fake_specs[name]])))
                loss_d.backward()
                opt_d[name].step()
                adv_d[name] = float(loss_d.data)
            # generator step
            terms, g_total = [], None
            for name, d in discs.items():
                d.requires_grad_(False)
                with no_grad():
                    real_out = d(real_specs[name])
                fake_out = d(fake_specs[name])
                d.requires_grad_(True)
                adv = adv_loss_g(_scores(fake_out))
                fm = None
                for r, f in zip(real_out, fake_out):
                    term = feature_matching_loss(r.features, f.features)
                    fm = term if fm is None else fm + term
                part = adv + fm * 2.0
                g_total = part if g_total is None else g_total + part
                terms.append(DiscriminatorTerms(name, float(adv.data), adv_d[name], float(fm.data)))
            mel = mel_loss(real, fake)
            g_total = g_total + mel * 45.0
            gen.zero_grad()
            g_total.backward()
            opt_g.step()
        except NonFiniteError as exc:
            raise DivergenceError(step, str(exc)) from exc
        report = compose_losses(terms, float(mel.data))
        if not all(math.isfinite(v) for v in (report.total_g, report.total_d)):
            raise DivergenceError(step, "non-finite loss")
        reports.append(report)
        if logger is not None:
            logger.append(step, report)
        if progress is not None:
            progress(step, report)
        if config.log_every and step % config.log_every == 0:
            log.info("step %d total_g %.4f total_d %.4f mel %.4f", step, report.total_g, report.total_d, report.mel)

    accuracy = discriminator_accuracy(gen, discs, heldout, config.segment_frames)
    if out_dir is not None:
        save_checkpoint(paths["generator"], gen.state_dict())
        for name, d in discs.items():
            key = f"discriminator_{name.lower()}"
            paths[key] = os.path.join(out_dir, f"{key}.nnck")
            save_checkpoint(paths[key], d.state_dict())
    return TrainResult(config, reports, gen, discs, accuracy, time.perf_counter() - t0, paths)


def mel_drop(reports: Sequence[LossReport], tail: int = 25) -> float:
    """Relative fall of the mel loss from step 1 to the mean of the last ``tail`` steps."""
    first = reports[0].mel
    last = float(np.mean([r.mel for r in reports[-tail:]]))
    return (first - last) / first


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def load_generator(path: str | os.PathLike) -> ToyGenerator:
    gen = ToyGenerator()
    gen.load_state_dict(load_checkpoint(path))
    return gen


def synthesize(generator: ToyGenerator, mels: np.ndarray, length: int) -> np.ndarray:
    with no_grad():
        y = generator(np.asarray(mels, dtype=np.float32))
    return y.data[:, :length].astype(np.float64)


def evaluate_pairs(pairs: Sequence[tuple[np.ndarray, np.ndarray]], fs: float = FS) -> list[MetricRow]:
    """Metric rows for ``(reference, synthesis)`` pairs plus a trailing mean row."""
    rows = [score_pair(f"item{i:03d}", ref, syn, fs, MEL) for i, (ref, syn) in enumerate(pairs)]
    return rows + [summarize(rows)]


def evaluate(generator: ToyGenerator, items: Sequence[SynthItem]) -> list[MetricRow]:
    """Analysis-synthesis metrics: each item's mel is vocoded and compared with its waveform."""
    length = items[0].wave.size
    syn = synthesize(generator, np.stack([it.mel for it in items]), length)
    return evaluate_pairs([(it.wave, s) for it, s in zip(items, syn)])


def eval_items(n_items: int, seed: int = 12345) -> list[SynthItem]:
    """A fixed evaluation set disjoint from every training stream."""
    return synth_dataset(seed, n_items)
