from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cqtd.errors import FormatError, InvalidInputError
from cqtd.formats import (
    KIND_CQT,
    KIND_MEL,
    KIND_STFT,
    SpectrogramFile,
    dump_kv,
    log_magnitude_image,
    parse_kv,
    read_pgm,
    write_pgm,
)

f32 = st.floats(-1e6, 1e6, allow_nan=False, width=32)


@given(re=arrays(np.float32, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=f32), seed=st.integers(0, 99))
def test_complex_round_trip_bit_exact(re, seed):
    im = np.random.default_rng(seed).standard_normal(re.shape).astype(np.float32)
    data = re.astype(np.complex64) + 1j * im.astype(np.complex64)
    for kind, B in ((KIND_CQT, 24), (KIND_STFT, 0)):
        back = SpectrogramFile.from_bytes(SpectrogramFile(kind, data, 24000, 256, B).to_bytes())
        assert back.kind == kind and back.bins_per_octave == B and back.fs == 24000 and back.hop == 256
        np.testing.assert_array_equal(back.data.view(np.float32), data.view(np.float32))


def test_mel_round_trip_and_header_layout(tmp_path):
    data = np.arange(6, dtype=np.float32).reshape(2, 3)
    f = SpectrogramFile(KIND_MEL, data, 16000, 128)
    blob = f.to_bytes()
    assert blob[:4] == b"CQTS" and len(blob) == 25 + 6 * 4
    f.save(tmp_path / "m.cqts")
    np.testing.assert_array_equal(SpectrogramFile.load(tmp_path / "m.cqts").data, data)


def test_spectrogram_format_errors():
    blob = SpectrogramFile(KIND_CQT, np.ones((2, 2), np.complex64), 24000, 256, 24).to_bytes()
    for broken in (b"XXXX" + blob[4:], blob[:-4], blob + b"\0\0\0\0", blob[:10]):
        with pytest.raises(FormatError):
            SpectrogramFile.from_bytes(broken)
    with pytest.raises(InvalidInputError):
        SpectrogramFile(KIND_STFT, np.ones((2, 2)), 24000, 256, 24)


def test_pgm_round_trip_and_orientation(tmp_path):
    mag = np.zeros((4, 5))
    mag[0, :] = 1.0  # lowest bin
    img = log_magnitude_image(mag)
    assert img.dtype == np.uint8 and img[-1].min() == 255 and img[0].max() == 0
    write_pgm(tmp_path / "a.pgm", img)
    np.testing.assert_array_equal(read_pgm(tmp_path / "a.pgm"), img)
    assert not log_magnitude_image(np.zeros((2, 2))).any()
    (tmp_path / "b.pgm").write_bytes(b"P2\n1 1\n255\n0")
    with pytest.raises(FormatError):
        read_pgm(tmp_path / "b.pgm")


def test_kv_parsing():
    kv = parse_kv("# comment\nseed = 3\n\nsteps=10  # trailing\n")
    assert kv == {"seed": "3", "steps": "10"}
    assert parse_kv(dump_kv(kv)) == kv
    for bad in ("novalue\n", "a = 1\na = 2\n", " = 4\n"):
        with pytest.raises(FormatError):
            parse_kv(bad)
