from __future__ import annotations

import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cqtd.dsp import (
    EPS,
    CQTParams,
    KernelBank,
    MelConfig,
    center_frequency,
    centered_taps,
    cqt_direct,
    dft,
    hann,
    idft,
    make_kernel,
    mel_edges,
    mel_filterbank,
    mel_spectrogram,
    q_factor,
    reflect_extend,
    stft,
    window_length,
)
from cqtd.errors import InvalidInputError, InvalidParameterError

mpmath.mp.dps = 50


def mp_q(B):
    return 1 / (mpmath.power(2, mpmath.mpf(1) / B) - 1)


# --- Q, centre frequencies, window lengths ----------------------------------

# the extended-precision value of Q(36) is 51.4386; the oracle, not a rounded literal, is authoritative
@pytest.mark.parametrize("B, approx", [(24, 34.127), (36, 51.4386)])
def test_q_factor_matches_extended_precision(B, approx):
    assert q_factor(B) == pytest.approx(float(mp_q(B)), rel=1e-13)
    assert q_factor(B) == pytest.approx(approx, abs=5e-4)


def test_q_factor_one_bin_per_octave_is_exactly_one():
    assert q_factor(1) == 1.0


@pytest.mark.parametrize("bad", [0, -3, 2.5])
def test_q_factor_rejects_invalid(bad):
    with pytest.raises(InvalidParameterError):
        q_factor(bad)


def test_center_frequency_examples():
    assert center_frequency(1, 32.7, 24) == 32.7
    assert center_frequency(25, 32.7, 24) == pytest.approx(65.4, rel=1e-15)
    expected = float(mpmath.mpf("32.7") * mpmath.sqrt(2))
    assert center_frequency(13, 32.7, 24) == pytest.approx(expected, rel=1e-14)
    assert center_frequency(13, 32.7, 24) == pytest.approx(46.24, abs=5e-3)
    with pytest.raises(InvalidParameterError):
        center_frequency(0, 32.7, 24)


@given(k=st.integers(1, 400), B=st.integers(1, 96), f1=st.floats(1.0, 1000.0))
def test_octave_doubling(k, B, f1):
    assert center_frequency(k + B, f1, B) == pytest.approx(2 * center_frequency(k, f1, B), rel=1e-12)


@given(k=st.integers(1, 400), B=st.integers(1, 96))
def test_center_frequency_ratio_is_geometric(k, B):
    assert center_frequency(k + 1, 32.7, B) / center_frequency(k, 32.7, B) == pytest.approx(2 ** (1 / B), rel=1e-12)


@pytest.mark.parametrize("f, expected", [(32.7, 50094), (16350.0, 100)])
def test_window_length_examples(f, expected):
    exact = mpmath.mpf(48000) / mpmath.mpf(str(f)) * mp_q(24)
    assert window_length(f, 48000, 24) == int(mpmath.floor(exact + mpmath.mpf("0.5")))
    assert abs(window_length(f, 48000, 24) - expected) <= 1


@given(f=st.floats(20.0, 5000.0), B=st.integers(1, 64))
def test_window_length_halves_when_frequency_doubles(f, B):
    assert abs(2 * window_length(2 * f, 48000, B) - window_length(f, 48000, B)) <= 1


def test_window_length_rejects_nyquist():
    with pytest.raises(InvalidParameterError):
        window_length(24000, 48000, 24)


def test_cqt_params_validation():
    with pytest.raises(InvalidParameterError):
        CQTParams(32.7, 24, 48000, 11)  # top bin above Nyquist
    with pytest.raises(InvalidParameterError):
        CQTParams(0.0, 24, 48000, 1)
    with pytest.raises(InvalidParameterError):
        CQTParams(32.7, 24, 48000, 1, hop=0)


# --- kernels -----------------------------------------------------------------

def _params(B=24, n_oct=3, f1=100.0, fs=8000.0):
    return CQTParams(f1, B, fs, n_oct, hop=64)


def test_kernel_bank_invariants():
    bank = KernelBank.from_params(_params())
    B = bank.params.bins_per_octave
    assert np.all(np.diff(bank.lengths) <= 0) and bank.lengths.min() >= 1
    np.testing.assert_allclose(bank.freqs[B:], 2 * bank.freqs[:-B], rtol=1e-15)
    np.testing.assert_allclose(bank.bandwidths[B:], 2 * bank.bandwidths[:-B], rtol=1e-9)
    np.testing.assert_allclose(bank.freqs / bank.bandwidths, bank.q, rtol=1e-12)


@pytest.mark.parametrize("k", [1, 7, 30, 72])
def test_kernel_envelope_is_scaled_hann(k):
    p = _params()
    ker = make_kernel(k, p)
    n = ker.size
    np.testing.assert_allclose(np.abs(ker), hann(np.arange(n) / n) / n, atol=1e-15)


def test_kernel_phase_advance_with_one_bin_per_octave():
    p = CQTParams(100.0, 1, 8000.0, 1)
    ker = make_kernel(1, p)
    n = ker.size
    step = np.angle(ker[2:-1] / ker[1:-2])
    np.testing.assert_allclose(step, -2 * np.pi * 1.0 / n, atol=1e-12)


def test_kernel_prefers_its_own_frequency():
    p = _params()
    bank = KernelBank.from_params(p)
    for k in (5, 30, 60):
        ker = bank.kernels[k - 1]
        n = ker.size
        t = np.arange(n)

        def response(f):
            return abs(np.vdot(ker, np.exp(-2j * np.pi * f * t / p.fs)))  # conj-free match of the atom's sign

        own = response(bank.freqs[k - 1])
        others = [f for f in np.linspace(20, p.fs / 2 - 20, 2000) if abs(f - bank.freqs[k - 1]) >= bank.bandwidths[k - 1]]
        assert own >= max(response(f) for f in others)


def test_centered_taps_are_symmetric_about_the_frame():
    for n in (9, 10, 101, 400):
        taps = centered_taps(n, 5.0)
        assert taps.size == 2 * (n // 2) + 1
        np.testing.assert_allclose(np.abs(taps), np.abs(taps[::-1]), atol=1e-15)


# --- direct CQT ----------------------------------------------------------------

def naive_cqt(x, bank, hop):
    """Literal double sum over j with reflect padding."""
    n_frames = -(-x.size // hop)
    out = np.zeros((bank.n_bins, n_frames), dtype=complex)
    for k in range(bank.n_bins):
        n_k = int(bank.lengths[k])
        half = n_k // 2
        for n in range(n_frames):
            for m in range(-half, half + 1):
                j = n * hop + m
                jj = j
                while jj < 0 or jj >= x.size:
                    jj = -jj if jj < 0 else 2 * (x.size - 1) - jj
                t = m + n_k / 2
                atom = hann(t / n_k) * np.exp(-2j * np.pi * t * bank.q / n_k) / n_k
                out[k, n] += x[jj] * np.conj(atom)
    return out


def test_cqt_direct_matches_naive_sum(rng):
    bank = KernelBank.from_params(CQTParams(500.0, 4, 8000.0, 2, hop=32))
    x = rng.standard_normal(150)
    got = cqt_direct(x, bank).data
    np.testing.assert_allclose(got, naive_cqt(x, bank, 32), rtol=1e-10, atol=1e-13)


def test_cqt_direct_zero_and_scaling(rng):
    bank = KernelBank.from_params(_params())
    assert np.all(cqt_direct(np.zeros(500), bank).data == 0)
    x = rng.standard_normal(500)
    a, b = cqt_direct(x, bank).magnitude, cqt_direct(3.5 * x, bank).magnitude
    np.testing.assert_allclose(b, 3.5 * a, rtol=1e-12)


@given(a=st.floats(-3, 3), b=st.floats(-3, 3), seed=st.integers(0, 2**16))
def test_cqt_direct_linearity(a, b, seed):
    r = np.random.default_rng(seed)
    bank = KernelBank.from_params(CQTParams(400.0, 6, 8000.0, 2, hop=50))
    x, y = r.standard_normal(300), r.standard_normal(300)
    lhs = cqt_direct(a * x + b * y, bank).data
    rhs = a * cqt_direct(x, bank).data + b * cqt_direct(y, bank).data
    assert np.linalg.norm(lhs - rhs) <= 1e-9 * max(np.linalg.norm(rhs), 1e-12) + 1e-12


def test_cqt_direct_tone_argmax():
    p = _params()
    bank = KernelBank.from_params(p)
    t = np.arange(8000) / p.fs
    for k in (10, 37, 60):
        spec = cqt_direct(np.cos(2 * np.pi * bank.freqs[k - 1] * t), bank)
        interior = spec.magnitude[:, 20:-20]
        assert np.all(np.argmax(interior, axis=0) == k - 1)


def test_cqt_direct_frame_count_and_errors():
    bank = KernelBank.from_params(_params())
    assert cqt_direct(np.ones(129), bank).n_frames == 3
    with pytest.raises(InvalidInputError):
        cqt_direct(np.array([]), bank)


# --- DFT / STFT ------------------------------------------------------------------

def test_dft_against_naive(rng):
    x = rng.standard_normal(64) + 1j * rng.standard_normal(64)
    n = np.arange(64)
    naive = np.exp(-2j * np.pi * np.outer(n, n) / 64) @ x
    np.testing.assert_allclose(dft(x), naive, atol=1e-9)
    imp = np.zeros(16)
    imp[0] = 1
    np.testing.assert_allclose(dft(imp), np.ones(16), atol=1e-15)
    tone = np.exp(2j * np.pi * 5 * np.arange(32) / 32)
    spec = np.abs(dft(tone))
    assert np.argmax(spec) == 5 and spec[5] == pytest.approx(32)


@given(seed=st.integers(0, 2**16), n=st.integers(1, 300))
def test_dft_round_trip(seed, n):
    x = np.random.default_rng(seed).standard_normal(n)
    assert np.max(np.abs(idft(dft(x)) - x)) < 1e-10 * max(1.0, np.abs(x).max())


def test_stft_shape_zero_and_tone():
    assert stft(np.zeros(1000), 256, 64).n_bins == 129
    assert np.all(stft(np.zeros(1000), 256, 64).data == 0)
    fs, n_fft = 8000.0, 256
    t = np.arange(4000) / fs
    m = 37
    spec = stft(np.sin(2 * np.pi * m * fs / n_fft * t), n_fft, 64, fs=fs)
    assert np.all(np.argmax(spec.magnitude[:, 4:-4], axis=0) == m)
    assert spec.n_frames == -(-4000 // 64)
    with pytest.raises(InvalidParameterError):
        stft(np.ones(10), 16, 32)


def test_stft_matches_framewise_fft(rng):
    x = rng.standard_normal(700)
    spec = stft(x, 128, 32)
    ext = reflect_extend(x, 64, 1000)
    win = hann(np.arange(128) / 128)
    for n in (0, 5, spec.n_frames - 1):
        np.testing.assert_allclose(spec.data[:, n], np.fft.rfft(ext[n * 32 : n * 32 + 128] * win), atol=1e-10)


def test_reflect_extend_matches_numpy_pad(rng):
    x = rng.standard_normal(20)
    np.testing.assert_array_equal(reflect_extend(x, 7, 11), np.pad(x, (7, 11), mode="reflect"))


# --- mel -------------------------------------------------------------------------

def test_mel_filterbank_triangle_areas():
    cfg = MelConfig(n_fft=4096, hop=256, n_mels=20, fmin=0.0, fmax=8000.0, fs=16000.0)
    fb = mel_filterbank(cfg)
    edges = mel_edges(cfg)
    df = cfg.fs / cfg.n_fft
    # triangle of height 2/(hi-lo) over base (hi-lo) has unit area; a Riemann sum over bins approximates it
    np.testing.assert_allclose(fb.sum(axis=1) * df, 1.0, rtol=0.05)
    for m in range(cfg.n_mels):
        lo, mid, hi = edges[m : m + 3]
        f = np.fft.rfftfreq(cfg.n_fft, 1 / cfg.fs)
        loop = [max(0.0, min((fi - lo) / (mid - lo), (hi - fi) / (hi - mid))) * 2 / (hi - lo) for fi in f]
        np.testing.assert_allclose(fb[m], loop, atol=1e-15)


def test_mel_spectrogram_floor_and_monotonicity(rng):
    cfg = MelConfig()
    zero = mel_spectrogram(np.zeros(2400), cfg)
    assert zero.shape == (80, 10)
    np.testing.assert_array_equal(zero, np.log(EPS))
    x = 0.1 * rng.standard_normal(2400)
    assert np.all(mel_spectrogram(2 * x, cfg) >= mel_spectrogram(x, cfg))


def test_mel_config_validation():
    with pytest.raises(InvalidParameterError):
        MelConfig(fmax=13000.0)
    with pytest.raises(InvalidParameterError):
        MelConfig(n_mels=0)
    assert math.isclose(MelConfig().fmax, 12000.0)
