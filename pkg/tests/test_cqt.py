from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cqtd.cqt import (
    ANTIALIAS,
    INTERPOLATOR,
    OctaveCQT,
    build_octave_plan,
    count_octaves,
    cqt_fast,
    cqt_reference,
    decimate_2x,
    decimate_2x_adjoint,
    delay_per_octave,
    downsample_2x,
    fir,
    multi_scale_cqt,
    octave_peak_frames,
    resample_2x_up,
    upsample_2x,
    upsample_2x_adjoint,
)
from cqtd.checks import desync_table
from cqtd.errors import InvalidInputError, InvalidParameterError


def rel_fro(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


# --- resampling ----------------------------------------------------------------

def test_upsample_dc_and_length():
    y, fs = resample_2x_up(np.ones(400), 24000)
    assert fs == 48000 and y.size == 800
    np.testing.assert_allclose(y[100:-100], 1.0, atol=1e-3)


def test_upsample_tone_peak_and_image_rejection():
    fs, n = 24000, 4800
    x = np.sin(2 * np.pi * 1000 * np.arange(n) / fs) * np.hanning(n)
    y, fs2 = resample_2x_up(x, fs)
    spec = np.abs(np.fft.rfft(y)) ** 2
    freqs = np.fft.rfftfreq(y.size, 1 / fs2)
    assert abs(freqs[np.argmax(spec)] - 1000) <= fs2 / y.size
    above = spec[freqs > fs / 2].sum() / spec.sum()
    assert 10 * np.log10(above) < -60


def test_interpolator_passband_ripple():
    h = INTERPOLATOR / 2  # unit DC gain per phase pair
    w = np.linspace(0, 0.45 * np.pi / 2 * 2, 400) / 2  # up to 0.45 fs_original, at the working rate
    resp = np.abs(np.exp(-1j * np.outer(w, np.arange(h.size))) @ h)
    ripple_db = 20 * np.log10(resp.max() / resp.min())
    assert ripple_db < 0.1


def test_downsample_tone_and_alias_rejection():
    fs, n = 48000, 9600
    t = np.arange(n) / fs
    win = np.hanning(n)
    y, fs2 = downsample_2x(np.sin(2 * np.pi * 1000 * t) * win, fs)
    spec = np.abs(np.fft.rfft(y))
    assert abs(np.fft.rfftfreq(y.size, 1 / fs2)[np.argmax(spec)] - 1000) <= fs2 / y.size
    # a tone above the new Nyquist must be suppressed, not folded back
    alias, _ = downsample_2x(np.sin(2 * np.pi * 18000 * t) * win, fs)
    assert 20 * np.log10(np.abs(alias).max() / np.abs(y).max()) < -60


@given(n=st.integers(1, 200), seed=st.integers(0, 2**16), comp=st.booleans())
def test_resampling_adjoints(n, seed, comp):
    r = np.random.default_rng(seed)
    x, g = r.standard_normal(n), r.standard_normal(2 * n)
    assert np.dot(upsample_2x(x), g) == pytest.approx(np.dot(x, upsample_2x_adjoint(g)), rel=1e-10, abs=1e-10)
    gd = r.standard_normal((n + 1) // 2)
    assert np.dot(decimate_2x(x, comp), gd) == pytest.approx(np.dot(x, decimate_2x_adjoint(gd, n, comp)),
                                                             rel=1e-10, abs=1e-10)


@given(n=st.integers(1, 150), seed=st.integers(0, 2**16))
def test_polyphase_matches_filter_then_subsample(n, seed):
    x = np.random.default_rng(seed).standard_normal(n)
    np.testing.assert_allclose(decimate_2x(x, True), fir(x, ANTIALIAS, 32)[::2], atol=1e-13)
    np.testing.assert_allclose(decimate_2x(x, False), fir(x, ANTIALIAS, 0)[::2], atol=1e-13)
    stuffed = np.zeros(2 * n)
    stuffed[::2] = x
    np.testing.assert_allclose(upsample_2x(x), fir(stuffed, INTERPOLATOR, 64), atol=1e-13)


# --- plans ---------------------------------------------------------------------

@pytest.mark.parametrize("fs, f1, n", [(24000, 32.7, 9), (16000, 32.7, 8), (24000, 6000.0, 1)])
def test_octave_counts(fs, f1, n):
    assert count_octaves(fs, f1) == n


def test_octave_plan_structure():
    plan = build_octave_plan(24000, 32.7, 24)
    assert plan.n_octaves == 9 and plan.n_bins == 216
    top = 32.7 * 2 ** (9 - 1 / 24)
    assert plan.freqs[-1] == pytest.approx(top) and top < 24000
    assert plan.fs_working == 48000
    rates = np.asarray(plan.octave_rates)
    np.testing.assert_array_equal(rates[1:] / rates[:-1], 2.0)
    assert plan.octave_rates[-1] == 48000
    with pytest.raises(InvalidParameterError):
        build_octave_plan(24000, 13000.0, 24)


def test_delay_per_octave_doubles():
    d = delay_per_octave(build_octave_plan(24000, 32.7, 24))
    assert d[-1] == 0 and np.all(np.diff(d) < 0)
    np.testing.assert_allclose(d[:-1] + 32, 2 * (d[1:] + 32))


# --- fast vs direct ------------------------------------------------------------

@pytest.mark.parametrize("B", [24, 36, 48])
def test_fast_matches_direct_on_noise(B):
    x = np.random.default_rng(B).standard_normal(12000)
    plan = build_octave_plan(24000, 32.7, B)
    fast, ref = cqt_fast(x, plan), cqt_reference(x, plan)
    assert fast.data.shape == ref.data.shape == (plan.n_bins, 47)
    assert rel_fro(fast.data, ref.data) < 1e-3


def test_fast_zero_signal_and_short_signal():
    plan = build_octave_plan(24000, 32.7, 24)
    assert np.all(cqt_fast(np.zeros(3000), plan).data == 0)
    short = cqt_fast(np.ones(100), plan)
    assert short.n_frames == 1
    with pytest.raises(InvalidInputError):
        cqt_fast(np.array([]), plan)


@given(length=st.integers(1, 3000))
def test_frame_count_is_ceil(length):
    plan = build_octave_plan(24000, 32.7, 24)
    op = OctaveCQT([plan], 256)
    assert op.layout(length).n_frames == max(1, -(-length // 256))


def test_multi_scale_shapes_and_tone():
    fs = 24000
    x = np.sin(2 * np.pi * 440 * np.arange(9000) / fs)
    ms = multi_scale_cqt(x, fs)
    assert [s.n_bins for s in ms.spectrograms] == [216, 324, 432]
    assert len({s.n_frames for s in ms.spectrograms}) == 1
    for B, spec in zip(ms.bins_per_octave, ms.spectrograms):
        expected = int(np.argmin(np.abs(build_octave_plan(fs, 32.7, B).freqs - 440)))
        frames = np.argmax(spec.magnitude[:, 5:-5], axis=0)
        assert np.all(frames == expected)


def test_octave_cqt_adjoint_dot_product():
    r = np.random.default_rng(3)
    plans = [build_octave_plan(24000, 32.7, B) for B in (24, 36)]
    for comp in (False, True):
        op = OctaveCQT(plans, 256, comp)
        x = r.standard_normal((2, 1500))
        ys = op.forward(x)
        gs = [r.standard_normal(y.shape) for y in ys]
        lhs = sum(np.sum(y * g) for y, g in zip(ys, gs))
        rhs = np.sum(x * op.adjoint(gs, 1500))
        assert lhs == pytest.approx(rhs, rel=1e-10)


def test_batched_forward_matches_single():
    r = np.random.default_rng(5)
    plan = build_octave_plan(24000, 32.7, 24)
    op = OctaveCQT([plan], 256, False)
    x = r.standard_normal((3, 2000))
    (batch,) = op.forward(x)
    for i in range(3):
        (single,) = op.forward(x[i])
        np.testing.assert_allclose(batch[i], single, rtol=1e-12, atol=1e-15)


# --- desynchronisation ------------------------------------------------------------

def test_raw_transform_is_desynchronised_but_compensated_is_not():
    for B in (24, 36, 48):
        table = desync_table(B)
        assert table.intra_octave_constant.all()
        assert table.desynchronized
        assert np.all(np.diff(table.octave_frames) <= 0)  # lower octaves lag more
    x = np.zeros(48000)
    x[24000] = 1
    plan = build_octave_plan(24000, 32.7, 24)
    peaks = octave_peak_frames(cqt_fast(x, plan, compensate_delay=True), 24)[:, :12]
    assert np.all(peaks == peaks[-1, 0])
