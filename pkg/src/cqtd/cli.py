"""``cqtd`` command line: transforms, probes, gradient checks, toy training and evaluation.

Exit codes: 0 success, 1 runtime failure, 2 usage error (bad flags, missing
input file, malformed config).
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys

import numpy as np

from . import checks
from .cqt import DEFAULT_HOP, F1_C1, build_octave_plan, cqt_fast, cqt_reference
from .dsp import stft
from .errors import CQTDError, FormatError, InvalidParameterError
from .formats import KIND_CQT, SpectrogramFile, log_magnitude_image, write_pgm
from .metrics import METRIC_COLUMNS, read_wav

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    """Raised for problems the user can fix by changing the invocation."""


def _require_file(path: str) -> str:
    if not os.path.isfile(path):
        raise UsageError(f"no such file: {path}")
    return path


def _write_rows(path: str, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


def _read_input(path: str) -> tuple[np.ndarray, int]:
    return read_wav(_require_file(path))


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_cqt(args) -> int:
    x, fs = _read_input(args.input)
    plan = build_octave_plan(fs, F1_C1, args.bins_per_octave)
    spec = cqt_reference(x, plan, args.hop) if args.direct else cqt_fast(x, plan, args.hop)
    SpectrogramFile(KIND_CQT, spec.data.astype(np.complex64), fs, args.hop, args.bins_per_octave).save(args.out)
    if args.pgm:
        write_pgm(args.pgm, log_magnitude_image(spec.magnitude))
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bin", "freq_hz"] + [f"frame{t}" for t in range(spec.n_frames)])
            for k, (f, row) in enumerate(zip(plan.freqs, spec.magnitude), 1):
                w.writerow([k, f"{f:.6f}"] + [f"{v:.6e}" for v in row])
    print(f"{'direct' if args.direct else 'fast'} CQT: {spec.n_bins} bins x {spec.n_frames} frames -> {args.out}")
    return EXIT_OK


def cmd_desync_demo(args) -> int:
    os.makedirs(args.out_dir, exist_ok=True)
    fs, hop, B = 24000, args.hop, args.bins_per_octave
    plan = build_octave_plan(fs, F1_C1, B)
    table = checks.desync_table(B, fs, hop)
    impulse, _ = checks.impulse_probe(fs)
    for name, probe in (("impulse", impulse), ("chirp", checks.chirp_probe(fs))):
        raw = cqt_fast(probe, plan, hop, compensate_delay=False)
        write_pgm(os.path.join(args.out_dir, f"{name}_raw_cqt.pgm"), log_magnitude_image(raw.magnitude))
    _write_rows(os.path.join(args.out_dir, "octave_offsets.csv"), table.rows())
    print(f"impulse at frame {table.impulse_frame:.2f}; raw octave-stacked CQT, B={B}, hop={hop}")
    print(f"{'octave':>6} {'peak_frame':>10} {'offset':>6} {'intra_const':>11}")
    for r in table.rows():
        print(f"{r['octave']:>6} {r['peak_frame']:>10} {r['offset_frames']:>6} {str(r['intra_octave_constant']):>11}")
    ok = table.desynchronized and bool(table.intra_octave_constant.all())
    print("inter-octave misalignment " + ("present" if table.desynchronized else "ABSENT")
          + "; intra-octave alignment " + ("holds" if table.intra_octave_constant.all() else "BROKEN"))
    return EXIT_OK if ok else EXIT_FAILURE


def cmd_gradcheck(args) -> int:
    results = checks.run_gradchecks(args.module, seed=args.seed)
    for r in results:
        print(r.line())
    bad = [r for r in results if not r.ok]
    print(f"{len(results) - len(bad)}/{len(results)} checks behaved as expected")
    return EXIT_OK if not bad else EXIT_FAILURE


def cmd_train(args) -> int:
    from .formats import dump_kv
    from .vocoder import TrainConfig, mel_drop, train

    try:
        config = TrainConfig.load(_require_file(args.config))
    except (FormatError, InvalidParameterError) as exc:
        raise UsageError(f"{args.config}: {exc}") from exc
    result = train(config, args.out_dir)
    summary = {
        "steps": config.steps,
        "mel_step1": result.reports[0].mel,
        "mel_final": result.reports[-1].mel,
        "mel_drop": mel_drop(result.reports),
        "heldout_accuracy": result.heldout_accuracy,
        "seconds": round(result.seconds, 3),
    }
    dump_kv(summary, os.path.join(args.out_dir, "summary.txt"))
    for k, v in summary.items():
        print(f"{k} = {v}")
    return EXIT_OK


def _checkpoint_label(path: str) -> str:
    head, tail = os.path.split(os.path.abspath(path))
    return os.path.basename(head) if tail == "generator.nnck" else os.path.splitext(tail)[0]


def cmd_eval(args) -> int:
    from .vocoder import eval_items, evaluate, load_generator

    for path in args.ckpt:
        _require_file(path)
    items = eval_items(args.n_items, args.seed)
    means = []
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("checkpoint",) + METRIC_COLUMNS)
        for i, path in enumerate(args.ckpt):
            label = args.label[i] if args.label and i < len(args.label) else _checkpoint_label(path)
            rows = evaluate(load_generator(path), items)
            means.append((label, rows[-1]))
            for r in rows:
                w.writerow([label, r.item, f"{r.mcd:.6f}", f"{r.f0rmse:.6f}", f"{r.fpc:.6f}", r.voiced_overlap, r.flag])
    print(f"{'checkpoint':<20} {'mcd_db':>8} {'f0rmse_hz':>10} {'fpc':>7}  flag")
    for label, m in means:
        print(f"{label:<20} {m.mcd:>8.3f} {m.f0rmse:>10.3f} {m.fpc:>7.3f}  {m.flag}")
    print(f"{len(items)} items per checkpoint -> {args.out}")
    return EXIT_OK


def cmd_compare(args) -> int:
    x, fs = _read_input(args.input)
    os.makedirs(args.out_dir, exist_ok=True)
    B = args.bins_per_octave
    plan = build_octave_plan(fs, F1_C1, B)
    cq = cqt_fast(x, plan, args.hop)
    st = stft(x, args.n_fft, args.hop, fs=fs)
    write_pgm(os.path.join(args.out_dir, "stft.pgm"), log_magnitude_image(st.magnitude))
    write_pgm(os.path.join(args.out_dir, "cqt.pgm"), log_magnitude_image(cq.magnitude))
    n_bins = int(np.sum(np.asarray(plan.freqs) < fs / 2))
    rows = checks.bin_spacing(fs, args.n_fft, F1_C1, B, n_bins)
    _write_rows(os.path.join(args.out_dir, "bin_spacing.csv"), rows)
    d_stft = {r["stft_delta_hz"] for r in rows}
    ratios = np.array([r["cqt_ratio"] for r in rows])
    print(f"STFT: {st.n_bins} bins, constant spacing {d_stft.pop():.4f} Hz")
    print(f"CQT:  {n_bins} bins below Nyquist, spacing ratio {ratios.mean():.12f} (2^(1/{B}) = {2 ** (1 / B):.12f})")
    print(f"CQT spacing grows from {rows[0]['cqt_delta_hz']:.4f} Hz to {rows[-1]['cqt_delta_hz']:.4f} Hz")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cqtd", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("cqt", help="CQT of a WAV file to a spectrogram container")
    c.add_argument("input")
    c.add_argument("--bins-per-octave", type=int, default=24)
    c.add_argument("--hop", type=int, default=DEFAULT_HOP)
    c.add_argument("--out", required=True)
    c.add_argument("--direct", action="store_true", help="use the direct reference transform")
    c.add_argument("--pgm", help="also write a log-magnitude PGM")
    c.add_argument("--csv", help="also write the magnitude matrix as CSV")
    c.set_defaults(func=cmd_cqt)

    d = sub.add_parser("desync-demo", help="show inter-octave misalignment of the raw fast CQT")
    d.add_argument("--out-dir", required=True)
    d.add_argument("--bins-per-octave", type=int, default=24)
    d.add_argument("--hop", type=int, default=DEFAULT_HOP)
    d.set_defaults(func=cmd_desync_demo)

    g = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    g.add_argument("--module", choices=("all",) + checks.SUITES, default="all")
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gradcheck)

    t = sub.add_parser("train", help="train the toy vocoder from a key = value config")
    t.add_argument("--config", required=True)
    t.add_argument("--out-dir", default="run")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="analysis-synthesis metrics for one or more generator checkpoints")
    e.add_argument("--ckpt", action="append", required=True, help="generator checkpoint; repeat to compare")
    e.add_argument("--label", action="append", help="table label per --ckpt, in order")
    e.add_argument("--n-items", type=int, default=8)
    e.add_argument("--seed", type=int, default=12345, help="evaluation set seed")
    e.add_argument("--out", default="eval.csv")
    e.set_defaults(func=cmd_eval)

    m = sub.add_parser("compare", help="STFT versus CQT resolution for a WAV file")
    m.add_argument("input")
    m.add_argument("--out-dir", required=True)
    m.add_argument("--bins-per-octave", type=int, default=24)
    m.add_argument("--n-fft", type=int, default=1024)
    m.add_argument("--hop", type=int, default=DEFAULT_HOP)
    m.set_defaults(func=cmd_compare)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, InvalidParameterError) as exc:
        print(f"cqtd: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CQTDError, OSError) as exc:
        print(f"cqtd: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
