"""Constant-Q transform analysis and multi-scale sub-band CQT discriminators for GAN vocoders."""
from __future__ import annotations

from .cqt import OctaveCQT, build_octave_plan, cqt_fast, cqt_reference, multi_scale_cqt
from .dsp import CQTParams, ComplexSpectrogram, KernelBank, MelConfig, cqt_direct, mel_spectrogram, stft
from .errors import CQTDError

__version__ = "0.1.0"

__all__ = [
    "CQTDError",
    "CQTParams",
    "ComplexSpectrogram",
    "KernelBank",
    "MelConfig",
    "OctaveCQT",
    "build_octave_plan",
    "cqt_direct",
    "cqt_fast",
    "cqt_reference",
    "mel_spectrogram",
    "multi_scale_cqt",
    "stft",
]
