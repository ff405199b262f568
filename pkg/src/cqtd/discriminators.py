"""CQT and STFT discriminators built on the numpy autodiff core.

A sub-discriminator sees one complex spectrogram as a ``(N, 2, K, T)`` tensor
(real and imaginary planes). In the sub-band variant the real and imaginary
planes are each cut into octaves and every octave gets its own 3x9 conv, so
no kernel ever straddles two octaves before the outputs are stacked back
along frequency. The trunk that follows is shared by all variants.
"""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .cqt import F1_C1, DEFAULT_HOP, SCALES, OctaveCQT, build_octave_plan
from .dsp import ComplexSpectrogram
from .errors import InvalidInputError, InvalidParameterError, ShapeError, StateError
from .nn import tensor as T
from .nn.conv import conv2d
from .nn.layers import Conv2d, LeakyReLU, Module
from .nn.spectral import STFTOp, cqt_stack
from .nn.tensor import Tensor

SBP_KERNEL = (3, 9)
TRUNK_KERNEL = (3, 8)
DILATED_KERNEL = (3, 9)
DILATIONS = (1, 2, 4)
STFT_SIZES = (512, 1024, 2048)
KINDS = ("ms-sb-cqt", "ms-cqt", "ms-stft")


# ---------------------------------------------------------------------------
# Octave partition
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SubBandSet:
    """Per-octave real and imaginary ``(B, n_frames)`` slices, lowest octave first."""

    real: tuple
    imag: tuple
    bins_per_octave: int

    @property
    def n_octaves(self) -> int:
        return len(self.real)

    def reassemble(self) -> np.ndarray:
        return np.concatenate(self.real, axis=0) + 1j * np.concatenate(self.imag, axis=0)


def split_octaves(spec: ComplexSpectrogram | np.ndarray, bins_per_octave: int) -> SubBandSet:
    data = spec.data if isinstance(spec, ComplexSpectrogram) else np.asarray(spec)
    if data.ndim != 2:
        raise InvalidInputError(f"expected a (bins, frames) spectrogram, got shape {data.shape}")
    k = data.shape[0]
    if bins_per_octave < 1 or k % bins_per_octave:
        raise InvalidInputError(f"{k} bins do not split into whole octaves of {bins_per_octave}")
    n = k // bins_per_octave
    rows = [data[o * bins_per_octave : (o + 1) * bins_per_octave] for o in range(n)]
    return SubBandSet(tuple(r.real.copy() for r in rows), tuple(r.imag.copy() for r in rows), bins_per_octave)


def octave_of_bin(k: int, bins_per_octave: int) -> int:
    """1-based octave of 1-based bin ``k``."""
    return -(-k // bins_per_octave)


# ---------------------------------------------------------------------------
# Building blocks
# ---------------------------------------------------------------------------

@dataclass
class DiscriminatorOutput:
    score: Tensor
    features: list  # depth order; the score map is the last entry

    def __post_init__(self):
        if not self.features:
            raise StateError("a discriminator must record at least one feature map")

    def tensors(self) -> list[Tensor]:
        return list(self.features)


class SubBandProcessing(Module):
    """One dedicated conv per octave on a single ``(N, 1, K, T)`` plane.

    The octave convs run as a single grouped convolution: octaves become
    channel groups, each zero-padded on its own, so no kernel reads a row of
    a neighbouring octave. Outputs are stacked back along frequency.
    """

    def __init__(self, n_octaves: int, bins_per_octave: int, channels: int, rng=None):
        self.bins_per_octave = bins_per_octave
        self.channels = channels
        self.convs = [Conv2d(1, channels, SBP_KERNEL, rng=rng) for _ in range(n_octaves)]

    def forward(self, plane: Tensor) -> Tensor:
        if plane.ndim != 4 or plane.shape[1] != 1:
            raise ShapeError(f"sub-band processing expects (N, 1, K, T), got {plane.shape}")
        n, _, k, t = plane.shape
        g, b, c = len(self.convs), self.bins_per_octave, self.channels
        if k != b * g:
            raise ShapeError(f"expected {g} octaves of {b} bins, got {k} bins")
        weight = T.concat([conv.weight_tensor() for conv in self.convs], axis=0)
        bias = T.concat([conv.bias for conv in self.convs], axis=0)
        first = self.convs[0]
        y = conv2d(T.reshape(plane, (n, g, b, t)), weight, bias, first.stride, first.padding, first.dilation, groups=g)
        y = T.transpose(T.reshape(y, (n, g, c, b, t)), (0, 2, 1, 3, 4))
        return T.reshape(y, (n, c, k, t))

    def forward_per_octave(self, plane: Tensor) -> Tensor:
        """Reference path: split, convolve each octave separately, concatenate."""
        bands = T.split(plane, [self.bins_per_octave] * len(self.convs), axis=2)
        return T.concat([conv(band) for conv, band in zip(self.convs, bands)], axis=2)


class FullBandConv(Module):
    """The ablation front end: a single 3x9 conv over the unsplit plane."""

    def __init__(self, channels: int, rng=None):
        self.conv = Conv2d(1, channels, SBP_KERNEL, rng=rng)

    def forward(self, plane: Tensor) -> Tensor:
        return self.conv(plane)


class Trunk(Module):
    """conv (3,8) -> three dilated convs, frequency stride 2 -> 3x3 score conv."""

    def __init__(self, in_channels: int, channels: int, rng=None):
        self.conv_in = Conv2d(in_channels, channels, TRUNK_KERNEL, rng=rng)
        self.dilated = [
            Conv2d(channels, channels, DILATED_KERNEL, stride=(2, 1), dilation=(1, d), rng=rng) for d in DILATIONS
        ]
        self.conv_out = Conv2d(channels, 1, (3, 3), rng=rng)
        self.act = LeakyReLU()

    def forward(self, x: Tensor, features: list) -> Tensor:
        h = self.act(self.conv_in(x))
        features.append(h)
        for conv in self.dilated:
            h = self.act(conv(h))
            features.append(h)
        score = self.conv_out(h)
        features.append(score)
        return score


class CQTSubDiscriminator(Module):
    """Sub-discriminator for one CQT scale; ``sub_band=False`` gives the ablation."""

    def __init__(self, bins_per_octave: int, n_octaves: int, channels: int = 32, sbp_channels: int = 32,
                 sub_band: bool = True, rng=None):
        self.bins_per_octave = bins_per_octave
        self.n_octaves = n_octaves
        self.sub_band = sub_band
        if sub_band:
            self.front_real = SubBandProcessing(n_octaves, bins_per_octave, sbp_channels, rng)
            self.front_imag = SubBandProcessing(n_octaves, bins_per_octave, sbp_channels, rng)
        else:
            self.front_real = FullBandConv(sbp_channels, rng)
            self.front_imag = FullBandConv(sbp_channels, rng)
        self.act = LeakyReLU()
        self.trunk = Trunk(2 * sbp_channels, channels, rng)

    def forward(self, spec: Tensor) -> DiscriminatorOutput:
        k = self.bins_per_octave * self.n_octaves
        if spec.ndim != 4 or spec.shape[1:3] != (2, k):
            raise ShapeError(f"expected (N, 2, {k}, T) CQT input, got {spec.shape}")
        re, im = T.split(spec, [1, 1], axis=1)
        latent = self.act(T.concat([self.front_real(re), self.front_imag(im)], axis=1))
        features = [latent]
        score = self.trunk(latent, features)
        return DiscriminatorOutput(score, features)


class STFTSubDiscriminator(Module):
    def __init__(self, n_fft: int, channels: int = 32, rng=None):
        self.n_fft = n_fft
        self.trunk = Trunk(2, channels, rng)

    def forward(self, spec: Tensor) -> DiscriminatorOutput:
        if spec.ndim != 4 or spec.shape[1] != 2:
            raise ShapeError(f"expected (N, 2, F, T) STFT input, got {spec.shape}")
        features: list = []
        score = self.trunk(spec, features)
        return DiscriminatorOutput(score, features)


# ---------------------------------------------------------------------------
# Multi-scale wrappers
# ---------------------------------------------------------------------------

@dataclass
class DiscriminatorConfig:
    kind: str = "ms-sb-cqt"
    channels: int = 32
    sbp_channels: int = 32
    scales: tuple = SCALES
    stft_sizes: tuple = STFT_SIZES
    fs: float = 24000.0
    hop: int = DEFAULT_HOP
    f1: float = F1_C1
    input_gain: float = 1.0  # fixed scale on the spectra; the 1/N_k transform is small next to conv biases
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidParameterError(f"unknown discriminator kind {self.kind!r}; choose from {KINDS}")
        if self.channels < 1 or self.sbp_channels < 1:
            raise InvalidParameterError("channel counts must be >= 1")
        if not (np.isfinite(self.input_gain) and self.input_gain > 0):
            raise InvalidParameterError(f"input_gain must be positive and finite, got {self.input_gain}")
        self.scales = tuple(int(s) for s in self.scales)
        self.stft_sizes = tuple(int(s) for s in self.stft_sizes)

    def to_kv(self) -> dict[str, str]:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = ",".join(str(x) for x in v) if isinstance(v, tuple) else str(v)
        return out

    @classmethod
    def from_kv(cls, kv: dict[str, str]) -> "DiscriminatorConfig":
        unknown = set(kv) - {f.name for f in fields(cls)}
        if unknown:
            raise InvalidParameterError(f"unknown discriminator config keys: {sorted(unknown)}")
        args = {}
        for name, raw in kv.items():
            default = getattr(cls, name)
            if isinstance(default, tuple):
                args[name] = tuple(int(x) for x in raw.split(",") if x.strip())
            elif isinstance(default, bool):
                args[name] = raw.lower() in ("1", "true", "yes")
            else:
                args[name] = type(default)(raw)
        return cls(**args)


class MultiScaleDiscriminator(Module):
    """Three sub-discriminators sharing one waveform front end.

    The CQT variants read the raw octave-stacked transform (filter delays left
    in place), so the inter-octave desynchronisation is part of their input.
    ``forward`` accepts a ``(N, L)`` waveform tensor or the list of
    spectrogram tensors returned by :meth:`spectra`.
    """

    def __init__(self, config: DiscriminatorConfig, rng: np.random.Generator | None = None):
        self.config = config
        rng = np.random.default_rng(config.seed) if rng is None else rng
        self.kind = config.kind
        if config.kind == "ms-stft":
            self.transforms = [STFTOp(n, n // 4) for n in config.stft_sizes]
            self.subs = [STFTSubDiscriminator(n, config.channels, rng) for n in config.stft_sizes]
        else:
            plans = [build_octave_plan(config.fs, config.f1, b) for b in config.scales]
            self.cqt = OctaveCQT(plans, config.hop, compensate_delay=False)
            self.subs = [
                CQTSubDiscriminator(p.bins_per_octave, p.n_octaves, config.channels, config.sbp_channels,
                                    sub_band=config.kind == "ms-sb-cqt", rng=rng)
                for p in plans
            ]

    @property
    def names(self) -> list[str]:
        sizes = self.config.stft_sizes if self.kind == "ms-stft" else self.config.scales
        return [f"{self.kind}/{s}" for s in sizes]

    def spectra(self, wave: Tensor) -> list[Tensor]:
        if wave.ndim != 2:
            raise ShapeError(f"expected (batch, samples) waveform, got {wave.shape}")
        if wave.shape[1] < 1:
            raise ShapeError("waveform is empty")
        specs = [op(wave) for op in self.transforms] if self.kind == "ms-stft" else cqt_stack(wave, self.cqt)
        gain = self.config.input_gain
        return specs if gain == 1.0 else [s * gain for s in specs]

    def forward(self, x) -> list[DiscriminatorOutput]:
        specs = self.spectra(x) if isinstance(x, Tensor) else list(x)
        if len(specs) != len(self.subs):
            raise ShapeError(f"expected {len(self.subs)} spectrograms, got {len(specs)}")
        return [sub(s) for sub, s in zip(self.subs, specs)]


def build_discriminator(kind: str, fs: float = 24000.0, channels: int = 32, sbp_channels: int | None = None,
                        seed: int = 0, **kw) -> MultiScaleDiscriminator:
    cfg = DiscriminatorConfig(kind=kind, fs=fs, channels=channels,
                              sbp_channels=channels if sbp_channels is None else sbp_channels, seed=seed, **kw)
    return MultiScaleDiscriminator(cfg)


def _forward(kind: str, signal, fs: float, disc: MultiScaleDiscriminator | None) -> list[DiscriminatorOutput]:
    disc = build_discriminator(kind, fs) if disc is None else disc
    if disc.kind != kind:
        raise InvalidParameterError(f"discriminator is {disc.kind!r}, expected {kind!r}")
    x = signal if isinstance(signal, Tensor) else Tensor(np.atleast_2d(np.asarray(signal, dtype=np.float32)))
    return disc(x)


def ms_sb_cqt_forward(signal, fs: float, disc: MultiScaleDiscriminator | None = None):
    return _forward("ms-sb-cqt", signal, fs, disc)


def ms_cqt_forward(signal, fs: float, disc: MultiScaleDiscriminator | None = None):
    return _forward("ms-cqt", signal, fs, disc)


def ms_stft_forward(signal, fs: float, disc: MultiScaleDiscriminator | None = None):
    return _forward("ms-stft", signal, fs, disc)


def sbp_receptive_bins(sub: CQTSubDiscriminator) -> list[tuple[int, int]]:
    """Input bin range (0-based, inclusive) feeding each octave's sub-band conv outputs.

    Zero padding at octave edges means the kernel's frequency reach is clipped
    to the octave's own rows.
    """
    B = sub.bins_per_octave
    return [(o * B, (o + 1) * B - 1) for o in range(sub.n_octaves)]


__all__ = [
    "SubBandSet", "split_octaves", "octave_of_bin", "DiscriminatorOutput", "SubBandProcessing", "FullBandConv",
    "Trunk", "CQTSubDiscriminator", "STFTSubDiscriminator", "DiscriminatorConfig", "MultiScaleDiscriminator",
    "build_discriminator", "ms_sb_cqt_forward", "ms_cqt_forward", "ms_stft_forward", "sbp_receptive_bins",
]
