"""Command-line front end: ``icquant <command> [options]``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys

import numpy as np

from icquant import bounds, container, infer, stats
from icquant.errors import CorruptionError, ValidationError
from icquant.partition import normalized_inlier_ranges, outlier_count
from icquant.tensor import dequantize_tensor, quantize_tensor

EXIT_OK, EXIT_VALIDATION, EXIT_CORRUPT, EXIT_IO = 0, 2, 3, 4
ANALYZE_GAMMAS = [k / 100 for k in range(1, 11)]


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("ICQ_THREADS", "1")))
    except ValueError:
        raise ValidationError("ICQ_THREADS must be an integer")


def _gap_widths(spec: str, gamma: float) -> list[int]:
    if spec == "auto":
        return [bounds.auto_gap_width(gamma) if gamma > 0 else 2]
    if ":" in spec:
        lo, hi = spec.split(":")
        return list(range(int(lo), int(hi) + 1))
    return [int(v) for v in spec.split(",")]


def _emit(text: str, out: str | None) -> None:
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(out, "w", newline="") as fh:
            fh.write(text)


def _csv(rows: list[dict], columns: list[str], trailer: str = "") -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue() + trailer


def cmd_synth(args) -> int:
    rng = np.random.default_rng(args.seed)
    shape = (args.rows, args.cols)
    if args.kind == "student-t":
        W = rng.standard_t(5, size=shape)
    else:
        W = rng.standard_normal(shape)
    if args.kind == "clustered":
        # move each row's top-gamma magnitudes into the first 10% of columns
        p = outlier_count(args.gamma, args.cols)
        span = max(p, math.ceil(bounds.CLUSTER_FRACTION * args.cols))
        for i in range(args.rows):
            order = np.argsort(-np.abs(W[i]), kind="stable")
            slots = rng.permutation(span)[:p]
            rest = np.setdiff1d(np.arange(args.cols), slots)
            row = np.empty(args.cols)
            row[slots] = W[i, order[:p]]
            row[rng.permutation(rest)] = W[i, order[p:]]
            W[i] = row
    container.save_raw((W * args.scale).astype(np.float32), args.out)
    return EXIT_OK


def cmd_quantize(args) -> int:
    W = container.load_raw(args.input).astype(np.float64)
    weights = None
    if args.weights:
        weights = container.load_raw(args.weights).astype(np.float64)
    b = _gap_widths(args.gapwidth, args.gamma)[0]
    mode = "blockwise" if args.block else "whole-row"
    kmeans = {"seed": args.seed, "restarts": args.restarts} if args.scheme == "sk" else {}
    t = quantize_tensor(
        W, args.gamma, args.bits, args.scheme, weights, b, mode, args.block or 0,
        workers=_threads(), **kmeans,
    )
    nbytes = container.save_quantized(t, args.out)
    W_hat = dequantize_tensor(t)
    err = (W_hat - W) ** 2
    storage = t.storage()
    report = {
        "d_out": t.d_out,
        "d_in": t.d_in,
        "scheme": t.scheme,
        "bits": t.bits,
        "gamma": t.gamma,
        "gap_width": t.gap_width,
        "gap_width_auto": args.gapwidth == "auto",
        "mode": t.mode,
        "block_size": t.block_size,
        "mse": float(err.mean()),
        "bits_per_weight": storage,
        "file_bytes": nbytes,
        "file_bits_per_weight": 8 * nbytes / (t.d_out * t.d_in),
        "index_overhead_measured": storage["index_bits_per_weight"],
        "index_overhead_lemma1": bounds.lemma1_bound(t.gamma, t.gap_width) if t.gamma > 0 else 0.0,
        "index_overhead_lemma2": bounds.lemma2_bound(t.gamma, t.gap_width, t.d_in) if t.gamma > 0 else 0.0,
    }
    if weights is not None:
        report["weighted_objective"] = float((weights * err).sum())
    _emit(json.dumps(report, indent=2, sort_keys=True) + "\n", args.report)
    return EXIT_OK


def cmd_dequantize(args) -> int:
    t = container.load_quantized(args.input)
    container.save_raw(dequantize_tensor(t), args.out)
    return EXIT_OK


def cmd_matvec(args) -> int:
    t = container.load_quantized(args.input)
    x = container.load_raw(args.vector).ravel()
    y = infer.matvec_predecoded(t, x) if args.predecoded else infer.matvec_fused(t, x)
    container.save_raw(y[None, :], args.out)
    return EXIT_OK


def cmd_bench(args) -> int:
    t = container.load_quantized(args.input)
    if args.vector:
        x = container.load_raw(args.vector).ravel()
    else:
        x = np.random.default_rng(args.seed).standard_normal(t.d_in)
    probe = infer.throughput_probe(t, x, args.repetitions)
    rows = [
        {"path": name, "min_s": f"{v['min_s']:.6f}", "median_s": f"{v['median_s']:.6f}",
         "outputs_identical": probe["outputs_identical"]}
        for name, v in probe["timings"].items()
    ]
    trailer = f"# quantized_bytes={probe['quantized_bytes']} fp16_bytes={probe['fp16_bytes']}\n"
    _emit(_csv(rows, ["path", "min_s", "median_s", "outputs_identical"], trailer), args.out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    rows = [
        bounds.simulate_overhead(args.d_in, args.gamma, b, args.trials, args.seed, args.model).csv_row()
        for b in _gap_widths(args.gapwidth, args.gamma)
    ]
    _emit(_csv(rows, bounds.CSV_COLUMNS, f"# rng={bounds.RNG_ALGORITHM} seed={args.seed}\n"), args.out)
    return EXIT_OK


def cmd_chi2(args) -> int:
    W = container.load_raw(args.input)
    rep = stats.chi_square_uniformity(W, args.gamma, args.group_size, args.significance)
    rows = [
        {"row": i, "statistic": f"{s:.6f}", "df": rep.df, "critical": f"{rep.critical:.6f}", "rejected": int(r)}
        for i, (s, r) in enumerate(zip(rep.per_row_statistic, rep.per_row_rejected))
    ]
    summary = (
        f"# summary rows={len(rows)} rejected={int(rep.per_row_rejected.sum())} "
        f"rejection_rate={rep.rejection_rate:.6f} underpowered={int(rep.underpowered)}\n"
    )
    _emit(_csv(rows, ["row", "statistic", "df", "critical", "rejected"], summary), args.out)
    return EXIT_OK


def cmd_analyze(args) -> int:
    W = container.load_raw(args.input)
    rows = [
        {"gamma": g, "normalized_inlier_range": f"{float(normalized_inlier_ranges(W, g).mean()):.6f}"}
        for g in ANALYZE_GAMMAS
    ]
    _emit(_csv(rows, ["gamma", "normalized_inlier_range"]), args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="icquant", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, fn, help):
        p = sub.add_parser(name, help=help)
        p.set_defaults(func=fn)
        return p

    p = add("synth", cmd_synth, "write a synthetic raw weight matrix")
    p.add_argument("--kind", choices=["gaussian", "student-t", "clustered"], default="gaussian")
    p.add_argument("--rows", type=int, required=True)
    p.add_argument("--cols", type=int, required=True)
    p.add_argument("--gamma", type=float, default=0.05)
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = add("quantize", cmd_quantize, "quantize a raw matrix into an ICQT file")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--gamma", type=float, default=0.05)
    p.add_argument("--bits", type=int, default=2)
    p.add_argument("--gapwidth", default="auto")
    p.add_argument("--scheme", choices=["rtn", "sk"], default="rtn")
    p.add_argument("--block", type=int, default=0, help="block size for blockwise gap coding (0: whole row)")
    p.add_argument("--weights", help="raw sensitivity weights, same shape as the input")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--restarts", type=int, default=0)
    p.add_argument("--report", default="-", help="JSON report path (default stdout)")

    p = add("dequantize", cmd_dequantize, "expand an ICQT file to a raw matrix")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)

    p = add("matvec", cmd_matvec, "multiply an ICQT tensor by a raw vector")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--vector", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--predecoded", action="store_true")

    p = add("bench", cmd_bench, "time the reference matvec paths")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--vector")
    p.add_argument("--repetitions", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="-")

    p = add("simulate", cmd_simulate, "Monte-Carlo index overhead versus the bounds")
    p.add_argument("--d-in", type=int, default=4096)
    p.add_argument("--gamma", type=float, default=0.05)
    p.add_argument("--gapwidth", default="3:9", help="width, comma list, lo:hi range or auto")
    p.add_argument("--model", choices=["uniform", "worst-case", "clustered"], default="uniform")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="-")

    p = add("chi2", cmd_chi2, "chi-square uniformity test of outlier positions")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--gamma", type=float, default=0.0625)
    p.add_argument("--group-size", type=int, default=256)
    p.add_argument("--significance", type=float, default=0.05)
    p.add_argument("--out", default="-")

    p = add("analyze", cmd_analyze, "normalized inlier range for gamma from 1% to 10%")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", default="-")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, ValueError) as exc:
        print(f"icquant: invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except CorruptionError as exc:
        print(f"icquant: corrupt input: {exc}", file=sys.stderr)
        return EXIT_CORRUPT
    except OSError as exc:
        print(f"icquant: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
