from __future__ import annotations

import csv

import numpy as np
import pytest

from cqtd.cli import EXIT_FAILURE, EXIT_OK, EXIT_USAGE, main
from cqtd.formats import KIND_CQT, SpectrogramFile, load_kv
from cqtd.metrics import write_wav

FS = 24000


@pytest.fixture
def tone(tmp_path):
    t = np.arange(FS // 2) / FS
    path = tmp_path / "tone.wav"
    write_wav(path, 0.5 * np.sin(2 * np.pi * 220.0 * t), FS)
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_usage_errors_exit_2(tmp_path, capsys):
    assert main([]) == EXIT_USAGE
    assert main(["nonsense"]) == EXIT_USAGE
    assert main(["cqt", str(tmp_path / "missing.wav"), "--out", str(tmp_path / "x.cqt")]) == EXIT_USAGE
    assert main(["gradcheck", "--module", "bogus"]) == EXIT_USAGE
    assert main(["train", "--config", str(tmp_path / "none.txt")]) == EXIT_USAGE
    assert "error" in capsys.readouterr().err


def test_invalid_parameter_exits_2(tone, tmp_path):
    assert main(["cqt", str(tone), "--bins-per-octave", "0", "--out", str(tmp_path / "x.cqt")]) == EXIT_USAGE


def test_malformed_wav_exits_1(tmp_path):
    bad = tmp_path / "bad.wav"
    bad.write_bytes(b"not a wav file at all")
    assert main(["cqt", str(bad), "--out", str(tmp_path / "x.cqt")]) == EXIT_FAILURE


def test_cqt_round_trip_and_direct_agreement(tone, tmp_path):
    fast, direct = tmp_path / "fast.cqt", tmp_path / "direct.cqt"
    pgm, table = tmp_path / "fast.pgm", tmp_path / "fast.csv"
    assert main(["cqt", str(tone), "--out", str(fast), "--pgm", str(pgm), "--csv", str(table)]) == EXIT_OK
    assert main(["cqt", str(tone), "--out", str(direct), "--direct"]) == EXIT_OK
    a, b = SpectrogramFile.load(fast), SpectrogramFile.load(direct)
    assert a.kind == KIND_CQT and a.bins_per_octave == 24 and a.hop == 256 and a.fs == FS
    assert a.data.shape == b.data.shape == (216, int(np.ceil(FS / 2 / 256)))
    rel = np.linalg.norm(a.data - b.data) / np.linalg.norm(b.data)
    assert rel < 1e-3
    assert pgm.read_bytes().startswith(b"P5")
    rows = read_csv(table)
    assert len(rows) == 216
    peak = max(rows, key=lambda r: float(r["frame10"]))
    assert abs(float(peak["freq_hz"]) - 220.0) < 220.0 * (2 ** (1 / 24) - 1)


def test_desync_demo(tmp_path, capsys):
    assert main(["desync-demo", "--out-dir", str(tmp_path)]) == EXIT_OK
    rows = read_csv(tmp_path / "octave_offsets.csv")
    assert len(rows) == 9
    assert [int(r["offset_frames"]) for r in rows] == [16, 8, 4, 2, 1, 0, 0, 0, 0]
    assert all(r["intra_octave_constant"] == "True" for r in rows)
    for name in ("impulse_raw_cqt.pgm", "chirp_raw_cqt.pgm"):
        assert (tmp_path / name).read_bytes().startswith(b"P5")
    assert "misalignment present" in capsys.readouterr().out


def test_gradcheck_sbp(capsys):
    assert main(["gradcheck", "--module", "sbp"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "(must fail)" in out and "WRONG" not in out


def test_compare(tone, tmp_path):
    assert main(["compare", str(tone), "--out-dir", str(tmp_path)]) == EXIT_OK
    rows = read_csv(tmp_path / "bin_spacing.csv")
    stft = {float(r["stft_delta_hz"]) for r in rows}
    assert stft == {FS / 1024}
    ratios = np.array([float(r["cqt_ratio"]) for r in rows])
    np.testing.assert_allclose(ratios, 2 ** (1 / 24), rtol=1e-12)
    assert (tmp_path / "stft.pgm").exists() and (tmp_path / "cqt.pgm").exists()


def test_train_and_eval(tmp_path, capsys):
    cfg = tmp_path / "train.txt"
    cfg.write_text("steps = 2\nbatch = 2\nn_items = 4\nheldout_items = 2\nd_channels = 4\n"
                   "sbp_channels = 2\nsegment_frames = 4\n")
    run = tmp_path / "run"
    assert main(["train", "--config", str(cfg), "--out-dir", str(run)]) == EXIT_OK
    summary = load_kv(run / "summary.txt")
    assert int(summary["steps"]) == 2
    assert 0.0 <= float(summary["heldout_accuracy"]) <= 1.0
    ckpt = run / "generator.nnck"
    out = tmp_path / "eval.csv"
    assert main(["eval", "--ckpt", str(ckpt), "--ckpt", str(ckpt), "--label", "a", "--label", "b",
                 "--n-items", "2", "--out", str(out)]) == EXIT_OK
    rows = read_csv(out)
    assert [r["checkpoint"] for r in rows] == ["a"] * 3 + ["b"] * 3
    assert rows[2]["item"] == "mean"
    assert rows[2]["mcd"] == rows[5]["mcd"]
    table = capsys.readouterr().out
    assert "mcd_db" in table


def test_train_rejects_malformed_config(tmp_path):
    cfg = tmp_path / "bad.txt"
    cfg.write_text("steps = 0\n")
    assert main(["train", "--config", str(cfg), "--out-dir", str(tmp_path / "r")]) == EXIT_USAGE
    cfg.write_text("this is not key value\n")
    assert main(["train", "--config", str(cfg), "--out-dir", str(tmp_path / "r")]) == EXIT_USAGE
