"""Command-line surface: train | sweep | eval | hull | report.

Every command reads a single JSON config document (see
:data:`hitlab.sweep.DEFAULT_CONFIG` for the schema and defaults) and
accepts repeated ``--set dotted.path=value`` overrides. Exit codes:
0 success, 2 config error, 3 numerical failure, 4 I/O failure.

Outputs:

* ``train``: checkpoint.json and metrics.json in the output directory.
* ``sweep``: runs.csv (deterministic bytes) plus timings.csv.
* ``eval``: metrics.json recomputed from a checkpoint.
* ``hull``: the input CSV with an ``on_hull`` column appended, plus a
  selection JSON naming hull rows and per-interval best runs.
* ``report``: report.json with the best cell per metric and one
  whitespace-separated grid matrix file per metric.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from . import selection, sweep
from .diffcore import NumericError
from .hvae import BetaVector
from .training import (
    CheckpointError,
    load_checkpoint,
    read_checkpoint_meta,
    save_checkpoint,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4

# lower is better only for distortion; everything else is maximized
REPORT_METRICS = {
    "D": "min", "R_z2": "max", "R_z1_given_z2": "max", "R_total": "max",
    "psnr": "max", "elbo": "max", "is": "max", "diversity": "max",
    "sharpness": "max", "mi_z2": "max", "mi_z1": "max",
    "acc_logreg_mu2": "max", "acc_knn_mu2": "max",
    "acc_logreg_mu1": "max", "acc_knn_mu1": "max",
    "bound_z2": "max", "bound_z1": "max",
}


def _load_config(path, assignments):
    if path is None:
        doc = {}
    else:
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise _IOFailure(f"cannot read config {path!r}: {exc}") from exc
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise sweep.ConfigError(f"config is not valid JSON: {exc}") from exc
    return sweep.merged_config(sweep.apply_overrides(sweep.merged_config(doc), assignments))


class _IOFailure(RuntimeError):
    pass


def _ensure_out(path):
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise _IOFailure(f"cannot create output directory {path!r}: {exc}") from exc


def _write_json(doc, path):
    try:
        with open(path, "w") as fh:
            json.dump(doc, fh, sort_keys=True, indent=1)
            fh.write("\n")
    except OSError as exc:
        raise _IOFailure(f"cannot write {path!r}: {exc}") from exc


# -- commands ------------------------------------------------------------


def cmd_train(args) -> int:
    doc = _load_config(args.config, args.set)
    if args.beta:
        try:
            doc["betas"] = [float(b) for b in args.beta.split(",")]
        except ValueError as exc:
            raise sweep.ConfigError(f"bad --beta value: {exc}") from exc
    if args.steps is not None:
        doc["train"]["steps"] = args.steps
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.recon_mode:
        doc["eval"]["recon_mode"] = args.recon_mode
    out = args.out or doc["out"]
    _ensure_out(out)

    model, metrics, _, run_seed, betas = sweep.run_single(doc)
    ck_path = os.path.join(out, "checkpoint.json")
    try:
        save_checkpoint(model, ck_path, betas=betas, seed=run_seed)
    except OSError as exc:
        raise _IOFailure(f"cannot write checkpoint: {exc}") from exc
    _write_json(sweep.metrics_to_doc(metrics, betas, run_seed),
                os.path.join(out, "metrics.json"))
    print(f"trained 1 model (seed {run_seed}); wrote {ck_path}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    doc = _load_config(args.config, args.set)
    if args.seed is not None:
        doc["seed"] = args.seed
    jobs = sweep.resolve_jobs(doc.get("jobs"), args.jobs)
    out = args.out or doc["out"]
    _ensure_out(out)

    records = sweep.run_sweep(doc, jobs=jobs)
    csv_path = os.path.join(out, "runs.csv")
    try:
        sweep.write_runs_csv(records, csv_path, meta=sweep.run_meta(doc))
        sweep.write_timings_csv(records, os.path.join(out, "timings.csv"))
    except OSError as exc:
        raise _IOFailure(f"cannot write sweep outputs: {exc}") from exc
    ok = sum(1 for r in records if r.status == "ok")
    print(f"swept {len(records)} cells ({ok} ok, jobs={jobs}); wrote {csv_path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    doc = _load_config(args.config, args.set)
    try:
        model = load_checkpoint(args.checkpoint)
        meta = read_checkpoint_meta(args.checkpoint)
    except OSError as exc:
        raise _IOFailure(f"cannot read checkpoint: {exc}") from exc
    if meta["betas"] is None or meta["seed"] is None:
        raise sweep.ConfigError("checkpoint lacks betas/seed metadata needed for eval")
    betas = BetaVector(meta["betas"])
    run_seed = int(meta["seed"])

    merged = sweep.merged_config(doc)
    sweep.validate_cross_constraints(merged)
    dataset = sweep.build_dataset(merged["dataset"])
    train_ds, eval_ds = dataset.split(int(merged["dataset"]["n_train"]))
    bins = sweep.resolve_bins(merged["grid"].get("bins"), model.config.L)
    metrics = sweep.evaluate_model(
        model, train_ds, eval_ds, sweep.fit_data_classifier(train_ds),
        sweep.EvalConfig.from_doc(merged["eval"]),
        seed=sweep.splitmix64(run_seed ^ sweep._EVAL_STREAM),
        boundary_ell=min(bins[0]),
    )
    out = args.out or merged["out"]
    _ensure_out(out)
    path = os.path.join(out, "metrics.json")
    _write_json(sweep.metrics_to_doc(metrics, betas, run_seed), path)
    print(f"evaluated checkpoint; wrote {path}")
    return EXIT_OK


def _numeric_column(rows, name, csv_path):
    if not rows or name not in rows[0]:
        raise sweep.ConfigError(f"column {name!r} not in {csv_path}")
    try:
        return [float(r[name]) for r in rows]
    except ValueError as exc:
        raise sweep.ConfigError(f"column {name!r} is not numeric: {exc}") from exc


def cmd_hull(args) -> int:
    try:
        rows, header = sweep.read_runs_csv(args.csv)
    except OSError as exc:
        raise _IOFailure(f"cannot read {args.csv!r}: {exc}") from exc
    except ValueError as exc:
        raise sweep.ConfigError(str(exc)) from exc
    xs = _numeric_column(rows, args.x_col, args.csv)
    ys = _numeric_column(rows, args.y_col, args.csv)

    usable = [
        i for i, r in enumerate(rows)
        if r.get("status", "ok") == "ok"
        and math.isfinite(xs[i]) and math.isfinite(ys[i])
    ]
    dropped = [i for i in range(len(rows)) if i not in usable]
    if dropped:
        print(f"dropping {len(dropped)} failed or non-finite rows: {dropped}",
              file=sys.stderr)
    if not usable:
        raise NumericError("no usable rows for hull selection")
    sign = -1.0 if args.minimize else 1.0
    points = [selection.FrontierPoint(i, xs[i], sign * ys[i]) for i in usable]
    hull = selection.upper_convex_hull(points)
    intervals = selection.best_per_interval(points, hull)

    out = args.out or os.path.dirname(os.path.abspath(args.csv))
    _ensure_out(out)
    on_hull = {p.run_id for p in hull}
    annotated = os.path.join(out, "hull_annotated.csv")
    try:
        with open(annotated, "w", newline="") as fh:
            fh.write(f"# hull of {args.y_col} over {args.x_col}"
                     f" ({'min' if args.minimize else 'max'})\n")
            fh.write(",".join(header + ["on_hull"]) + "\n")
            for i, row in enumerate(rows):
                fh.write(",".join([row[h] for h in header] + [str(int(i in on_hull))]) + "\n")
    except OSError as exc:
        raise _IOFailure(f"cannot write {annotated!r}: {exc}") from exc

    doc = {
        "x_col": args.x_col,
        "y_col": args.y_col,
        "maximize": not args.minimize,
        "hull_rows": [
            {"row": p.run_id, "x": p.x, "y": sign * p.y} for p in hull
        ],
        "intervals": [
            {"lo": iv.lo, "hi": iv.hi, "row": iv.run_id} for iv in intervals
        ],
    }
    sel_path = os.path.join(out, "selection.json")
    _write_json(doc, sel_path)
    print(f"hull has {len(hull)} of {len(points)} points; wrote {sel_path}")
    return EXIT_OK


def cmd_report(args) -> int:
    try:
        rows, _ = sweep.read_runs_csv(args.csv)
    except OSError as exc:
        raise _IOFailure(f"cannot read {args.csv!r}: {exc}") from exc
    except ValueError as exc:
        raise sweep.ConfigError(str(exc)) from exc
    ok_rows = [r for r in rows if r.get("status") == "ok"]
    if not ok_rows:
        raise sweep.ConfigError("report needs at least one successful row")

    out = args.out or os.path.dirname(os.path.abspath(args.csv))
    _ensure_out(out)
    ni = max(int(r["grid_i"]) for r in rows) + 1
    nj = max(int(r["grid_j"]) for r in rows) + 1

    best = {}
    for metric, direction in REPORT_METRICS.items():
        if metric not in rows[0]:
            continue
        grid = np.full((ni, nj), math.nan)
        for r in rows:
            if r["status"] == "ok":
                grid[int(r["grid_i"]), int(r["grid_j"])] = float(r[metric])
        matrix_path = os.path.join(out, f"plot_{metric}.dat")
        try:
            with open(matrix_path, "w", newline="") as fh:
                for i in range(ni):
                    fh.write(" ".join(repr(float(v)) for v in grid[i]) + "\n")
        except OSError as exc:
            raise _IOFailure(f"cannot write {matrix_path!r}: {exc}") from exc

        finite = [
            r for r in ok_rows if math.isfinite(float(r[metric]))
        ]
        if not finite:
            continue
        key = (lambda r: float(r[metric])) if direction == "max" else (
            lambda r: -float(r[metric]))
        # ties resolve to the first cell in grid order
        winner = max(
            sorted(finite, key=lambda r: (int(r["grid_i"]), int(r["grid_j"]))),
            key=key,
        )
        best[metric] = {
            "grid_i": int(winner["grid_i"]),
            "grid_j": int(winner["grid_j"]),
            "beta_2": float(winner["beta_2"]),
            "beta_1": float(winner["beta_1"]),
            "value": float(winner[metric]),
            "direction": direction,
        }

    path = os.path.join(out, "report.json")
    _write_json({"best_cells": best, "grid_shape": [ni, nj]}, path)
    print(f"reported {len(best)} metrics over a {ni}x{nj} grid; wrote {path}")
    return EXIT_OK


# -- entry ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hitlab",
        description="Desk-scale rate-control experiments for hierarchical VAEs",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", help="JSON config document")
            p.add_argument("--set", action="append", default=[],
                           metavar="PATH=VALUE", help="override a config entry")
            p.add_argument("--seed", type=int, help="override the global seed")
        p.add_argument("--out", help="output directory")

    p_train = sub.add_parser("train", help="train one model")
    common(p_train)
    p_train.add_argument("--beta", help="comma-separated betas, top layer first")
    p_train.add_argument("--steps", type=int)
    p_train.add_argument("--recon-mode", choices=("mode", "sample"))
    p_train.set_defaults(fn=cmd_train)

    p_sweep = sub.add_parser("sweep", help="train the whole beta grid")
    common(p_sweep)
    p_sweep.add_argument("--jobs", type=int, help="parallel training processes")
    p_sweep.set_defaults(fn=cmd_sweep)

    p_eval = sub.add_parser("eval", help="re-evaluate a checkpoint")
    common(p_eval)
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.set_defaults(fn=cmd_eval)

    p_hull = sub.add_parser("hull", help="upper-hull selection over a sweep CSV")
    p_hull.add_argument("csv")
    p_hull.add_argument("--x-col", default="R_total")
    p_hull.add_argument("--y-col", required=True)
    p_hull.add_argument("--minimize", action="store_true",
                        help="treat lower metric values as better")
    common(p_hull, config=False)
    p_hull.set_defaults(fn=cmd_hull)

    p_report = sub.add_parser("report", help="best cells and plot matrices")
    p_report.add_argument("csv")
    common(p_report, config=False)
    p_report.set_defaults(fn=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except sweep.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NumericError, FloatingPointError, ValueError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except _IOFailure as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"i/o failure: {exc}", file=sys.stderr)
        return EXIT_IO


def entry():
    raise SystemExit(main())


if __name__ == "__main__":
    entry()
