"""File formats: spectrogram container, PGM images, key = value config files."""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, InvalidInputError

# ---------------------------------------------------------------------------
# Spectrogram container
# ---------------------------------------------------------------------------

SPEC_MAGIC = b"CQTS"
SPEC_VERSION = 1
_HEADER = struct.Struct("<4sHBIIIIH")
KIND_CQT, KIND_STFT, KIND_MEL = 0, 1, 2
_COMPLEX_KINDS = (KIND_CQT, KIND_STFT)


@dataclass(frozen=True, eq=False)
class SpectrogramFile:
    kind: int
    data: np.ndarray  # (n_bins, n_frames); complex for CQT/STFT, real for mel
    fs: int
    hop: int
    bins_per_octave: int = 0

    def __post_init__(self):
        if self.kind not in (KIND_CQT, KIND_STFT, KIND_MEL):
            raise InvalidInputError(f"unknown spectrogram kind {self.kind}")
        if self.data.ndim != 2:
            raise InvalidInputError(f"spectrogram data must be 2-D, got {self.data.shape}")
        if self.kind != KIND_CQT and self.bins_per_octave:
            raise InvalidInputError("bins_per_octave is only meaningful for CQT files")

    @property
    def n_bins(self) -> int:
        return self.data.shape[0]

    @property
    def n_frames(self) -> int:
        return self.data.shape[1]

    def to_bytes(self) -> bytes:
        head = _HEADER.pack(SPEC_MAGIC, SPEC_VERSION, self.kind, self.n_bins, self.n_frames,
                            int(self.fs), int(self.hop), int(self.bins_per_octave))
        if self.kind in _COMPLEX_KINDS:
            payload = np.empty(self.data.shape + (2,), dtype="<f4")
            payload[..., 0] = self.data.real
            payload[..., 1] = self.data.imag
        else:
            payload = np.asarray(self.data.real, dtype="<f4")
        return head + payload.tobytes(order="C")

    @classmethod
    def from_bytes(cls, blob: bytes) -> "SpectrogramFile":
        if len(blob) < _HEADER.size:
            raise FormatError("spectrogram file is shorter than its header")
        magic, version, kind, n_bins, n_frames, fs, hop, B = _HEADER.unpack_from(blob)
        if magic != SPEC_MAGIC:
            raise FormatError(f"bad magic {magic!r}")
        if version != SPEC_VERSION:
            raise FormatError(f"unsupported spectrogram version {version}")
        width = 2 if kind in _COMPLEX_KINDS else 1
        expected = n_bins * n_frames * width * 4
        if len(blob) - _HEADER.size != expected:
            raise FormatError(f"payload is {len(blob) - _HEADER.size} bytes, header implies {expected}")
        arr = np.frombuffer(blob, dtype="<f4", offset=_HEADER.size)
        if width == 2:
            arr = arr.reshape(n_bins, n_frames, 2)
            data = arr[..., 0].astype(np.complex64) + 1j * arr[..., 1].astype(np.complex64)
        else:
            data = arr.reshape(n_bins, n_frames).copy()
        return cls(kind, data, fs, hop, B)

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path: str | os.PathLike) -> "SpectrogramFile":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


# ---------------------------------------------------------------------------
# PGM
# ---------------------------------------------------------------------------

def log_magnitude_image(mag: np.ndarray, dynamic_range_db: float = 80.0) -> np.ndarray:
    """8-bit image of ``20 log10 |x|`` normalised to the array maximum; low frequencies at the bottom."""
    mag = np.abs(np.asarray(mag, dtype=np.float64))
    peak = mag.max() if mag.size else 0.0
    if peak <= 0:
        return np.zeros(mag.shape, dtype=np.uint8)
    db = 20.0 * np.log10(np.maximum(mag / peak, 10 ** (-dynamic_range_db / 20)))
    img = np.round((db + dynamic_range_db) / dynamic_range_db * 255.0)
    return np.clip(img, 0, 255).astype(np.uint8)[::-1]


def write_pgm(path: str | os.PathLike, image: np.ndarray) -> None:
    image = np.asarray(image)
    if image.ndim != 2 or image.dtype != np.uint8:
        raise InvalidInputError(f"PGM needs a 2-D uint8 image, got {image.dtype} {image.shape}")
    h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(image).tobytes())


def read_pgm(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    parts = blob.split(maxsplit=4)
    if len(parts) < 5 or parts[0] != b"P5" or parts[3] != b"255":
        raise FormatError(f"{path}: not an 8-bit binary PGM")
    w, h = int(parts[1]), int(parts[2])
    pixels = parts[4]
    if len(pixels) != w * h:
        raise FormatError(f"{path}: expected {w * h} pixels, found {len(pixels)}")
    return np.frombuffer(pixels, dtype=np.uint8).reshape(h, w)


# ---------------------------------------------------------------------------
# key = value config
# ---------------------------------------------------------------------------

def parse_kv(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise FormatError(f"line {lineno}: empty key")
        if key in out:
            raise FormatError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def load_kv(path: str | os.PathLike) -> dict[str, str]:
    with open(path) as fh:
        return parse_kv(fh.read())


def dump_kv(values: dict, path: str | os.PathLike | None = None) -> str:
    text = "".join(f"{k} = {v}\n" for k, v in values.items())
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text
