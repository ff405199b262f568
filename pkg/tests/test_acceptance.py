"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The training criteria share three 500-step runs (main, same-seed rerun,
plain multi-scale CQT ablation) through a module-scoped fixture.
"""
from __future__ import annotations

import csv
import time

import mpmath
import numpy as np
import pytest

from cqtd import checks
from cqtd.cli import main
from cqtd.cqt import build_octave_plan, cqt_fast, cqt_reference
from cqtd.dsp import center_frequency, q_factor
from cqtd.losses import DiscriminatorTerms, compose_losses
from cqtd.metrics import estimate_f0, f0rmse, fpc, mcd
from cqtd.vocoder import TrainConfig, mel_drop, train

FS = 24000
F1 = 32.7


@pytest.fixture
def report(capsys):
    def emit(n: int, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n[acceptance {n}] {'PASS' if ok else 'FAIL'}: {detail}")
    return emit


def rel_fro(a, b) -> float:
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


def test_1_fast_cqt_matches_direct(report):
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst = 0.0
    for i in range(20):
        B = (24, 36, 48)[i % 3]
        x = rng.standard_normal(int(rng.uniform(0.25, 1.0) * FS))
        plan = build_octave_plan(FS, F1, B)
        worst = max(worst, rel_fro(cqt_fast(x, plan).data, cqt_reference(x, plan).data))
    seconds = time.perf_counter() - t0
    ok = worst < 1e-3 and seconds < 60
    report(1, ok, f"max relative Frobenius error {worst:.2e} (< 1e-3), {seconds:.1f} s (< 60 s)")
    assert ok


def test_2_structure_constants(report):
    mpmath.mp.dps = 50
    errs = []
    for B in (24, 36):
        exact = 1 / (mpmath.power(2, mpmath.mpf(1) / B) - 1)
        errs.append(abs(float((q_factor(B) - exact) / exact)))
    ratio_errs = []
    for B in (24, 36, 48):
        for k in range(1, 200):
            ratio_errs.append(abs(center_frequency(k + B, F1, B) / (2 * center_frequency(k, F1, B)) - 1))
            ratio_errs.append(abs(center_frequency(k + 1, F1, B) / center_frequency(k, F1, B) / 2 ** (1 / B) - 1))
    ok = max(errs) < 1e-12 and max(ratio_errs) < 1e-12
    report(2, ok, f"Q relative error {max(errs):.1e}, octave and bin ratio error {max(ratio_errs):.1e} (< 1e-12)")
    assert ok


def test_3_tone_localization(report):
    rng = np.random.default_rng(3)
    hits = total = 0
    for i in range(10):
        B = (24, 36, 48)[i % 3]
        plan = build_octave_plan(FS, F1, B)
        below = int(np.sum(np.asarray(plan.freqs) < 0.45 * FS))
        k = int(rng.integers(B, below))  # 1-based bin, above the lowest octave
        f = center_frequency(k, F1, B)
        t = np.arange(FS) / FS
        spec = cqt_fast(np.sin(2 * np.pi * f * t), plan)
        interior = spec.magnitude[:, 4:-4]
        hits += int(np.sum(interior.argmax(axis=0) == k - 1))
        total += interior.shape[1]
    rate = hits / total
    ok = rate >= 0.95
    report(3, ok, f"argmax at the expected bin in {rate:.1%} of interior frames (>= 95%)")
    assert ok


def test_4_desynchronization_witness(report, tmp_path, capsys):
    table = checks.desync_table(24, FS, 256)
    code = main(["desync-demo", "--out-dir", str(tmp_path)])
    out = capsys.readouterr().out
    ok = (bool(table.intra_octave_constant.all()) and int(np.abs(table.offsets).max()) >= 1
          and code == 0 and "misalignment present" in out)
    report(4, ok, f"octave offsets {table.offsets.tolist()} frames, intra-octave constant "
                  f"{bool(table.intra_octave_constant.all())}, desync-demo exit {code}")
    assert ok


def test_5_gradient_checks(report):
    results = checks.run_gradchecks("all")
    regular = [r for r in results if not r.case.negative_control]
    controls = [r for r in results if r.case.negative_control]
    worst = max(r.report.max_rel_error for r in regular)
    ok = all(r.ok for r in results) and len(regular) >= 5 and worst < 1e-3 and len(controls) == 3
    report(5, ok, f"{len(regular)} cases max relative error {worst:.1e} (< 1e-3); "
                  f"{sum(not r.report.passed for r in controls)}/{len(controls)} negative controls fail")
    assert ok


def test_6_loss_composition(report):
    hand = compose_losses([DiscriminatorTerms("C", 1.0, 0.0, 2.0)], 3.0)
    rng = np.random.default_rng(6)
    a = DiscriminatorTerms("C", *rng.uniform(0, 3, 3))
    b = DiscriminatorTerms("S", *rng.uniform(0, 3, 3))
    both, ra, rb = compose_losses([a, b], 1.5), compose_losses([a], 0.0), compose_losses([b], 0.0)
    additive = both.total_d == ra.total_d + rb.total_d and both.total_g == 45.0 * 1.5 + a.generator_part + b.generator_part
    ok = hand.total_g == 140.0 and additive
    report(6, ok, f"hand case total_g = {hand.total_g} (140); discriminator additivity exact: {additive}")
    assert ok


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance")
    config = TrainConfig(seed=0, steps=500, batch=8)
    out = {}
    for name, cfg in (("main", config), ("rerun", config),
                      ("ms-cqt", TrainConfig(seed=0, steps=500, batch=8, discriminators="MS-CQT"))):
        out[name] = train(cfg, root / name)
    return out


def test_7_toy_training(report, runs):
    main_run, rerun = runs["main"], runs["rerun"]
    acc = main_run.heldout_accuracy
    drop = mel_drop(main_run.reports)
    same = all(open(main_run.paths[k], "rb").read() == open(rerun.paths[k], "rb").read()
               for k in ("log", "breakdown"))
    ok_a, ok_b, ok_c = acc > 0.9, drop >= 0.3, same
    fast = main_run.seconds < 15 * 60
    report(7, ok_a and ok_b and ok_c and fast,
           f"(a) held-out accuracy {acc:.3f} (> 0.9) {'ok' if ok_a else 'MISSED'}; "
           f"(b) mel drop {drop:.1%} (>= 30%) {'ok' if ok_b else 'MISSED'}; "
           f"(c) identical logs {same}; run took {main_run.seconds:.0f} s (< 900 s)")
    assert ok_b and ok_c and fast
    assert ok_a


def test_8_ablation_table(report, runs, tmp_path, capsys):
    out = tmp_path / "eval.csv"
    code = main(["eval", "--ckpt", runs["main"].paths["generator"], "--label", "ms-sb-cqt",
                 "--ckpt", runs["ms-cqt"].paths["generator"], "--label", "ms-cqt",
                 "--n-items", "8", "--out", str(out)])
    table = capsys.readouterr().out
    with open(out, newline="") as fh:
        means = {r["checkpoint"]: float(r["mcd"]) for r in csv.DictReader(fh) if r["item"] == "mean"}
    ok = code == 0 and set(means) == {"ms-sb-cqt", "ms-cqt"} and all(np.isfinite(v) for v in means.values())
    report(8, ok, "eval MCD " + ", ".join(f"{k} {v:.3f} dB" for k, v in means.items()) + " (no ordering asserted)")
    with capsys.disabled():
        print(table)
    assert ok


def test_9_metrics_sanity(report):
    t = np.arange(FS) / FS
    x = 0.5 * np.sin(2 * np.pi * 220.0 * t) + 0.2 * np.sin(2 * np.pi * 440.0 * t + 0.3)
    track = estimate_f0(x, FS)
    voiced = track.f0[track.voiced]
    err = float(np.max(np.abs(voiced - 220.0)))
    values = (mcd(x, x), fpc(track, track), f0rmse(track, track))
    ok = values[0] == 0.0 and values[1] == 1.0 and values[2] == 0.0 and err <= 2.0 and voiced.size > 0
    report(9, ok, f"MCD(x,x) {values[0]}, FPC(x,x) {values[1]}, F0RMSE(x,x) {values[2]}, "
                  f"tracker max error {err:.3f} Hz at 220 Hz")
    assert ok
