"""Grid sweeps over per-layer rate multipliers, and single-run evaluation.

One JSON config document drives everything: dataset generation, model
shape, training hyperparameters, the beta grid, and evaluation settings.
A sweep trains one model per grid cell (optionally across processes),
evaluates it, and writes ``runs.csv`` with one row per cell in grid
order. Output bytes are a pure function of the config and global seed;
wall-clock timings go to a separate ``timings.csv`` sidecar so the main
artifact stays reproducible.

Cell seeds derive from the global seed as ``splitmix64(seed XOR cell)``
with cells numbered row-major, so any cell can be reproduced in
isolation. The single-run path is exactly the 1x1 sweep.
"""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .datasets import Dataset, gen_binary_bars, gen_gaussian, gen_labeled_mixture
from .diffcore import NumericError
from .distributions import NoiseSource, splitmix64
from .hvae import BetaVector, HvaeConfig, HvaeModel, generate, infer, layer_rates, reconstruct
from .metrics import (
    RunMetrics,
    accuracy_bound_inverse,
    fit_probe,
    inception_score,
    mi_estimate,
    predict_accuracy,
    psnr,
)
from .training import TrainSpec, train
from . import hvae

CSV_FORMAT_VERSION = 1

CSV_COLUMNS = (
    "grid_i", "grid_j", "beta_2", "beta_1", "seed", "steps",
    "D", "R_z2", "R_z1_given_z2", "R_total", "psnr", "elbo",
    "is", "diversity", "sharpness", "mi_z2", "mi_z1",
    "acc_logreg_mu2", "acc_knn_mu2", "acc_logreg_mu1", "acc_knn_mu1",
    "bound_z2", "bound_z1", "wall_ms", "status",
)

_EVAL_STREAM = 0xE7A1


class ConfigError(ValueError):
    """The configuration document is invalid."""


DEFAULT_CONFIG = {
    "seed": 20240811,
    "dataset": {
        "kind": "mixture",
        "classes": 4,
        "dim": 8,
        "separation": 3.0,
        "variances": 1.0,
        "grid_size": 4,
        "n_train": 4096,
        "n_eval": 4096,
        "seed": 11,
        "entropy_mc": 200_000,
    },
    "model": {
        "data_dim": 8,
        "latent_dims": [4, 2],
        "likelihood": "gaussian",
        "sigma_x": 0.71,
        "inference": "top_down",
        "hidden": [16],
        "activation": "tanh",
    },
    "train": {
        "steps": 5000,
        "batch_size": 128,
        "lr": 1e-3,
        "adam_beta1": 0.9,
        "adam_beta2": 0.999,
        "adam_eps": 1e-8,
        "eval_interval": 500,
    },
    "betas": [1.0, 1.0],
    "grid": {
        "axes": [
            {"min": 0.1, "max": 10.0, "count": 5, "log": True},
            {"min": 0.1, "max": 10.0, "count": 5, "log": True},
        ],
        "bins": None,
    },
    "eval": {
        "recon_mode": "mode",
        "gen_mode": "mode",
        "n_generate": 1024,
        "mi_mc": 1,
        "knn_k": 5,
    },
    "jobs": None,
    "out": "out",
}


def merged_config(user: dict) -> dict:
    """Overlay a user document on the defaults (one level of nesting)."""
    if not isinstance(user, dict):
        raise ConfigError("config must be a JSON object")
    out = {}
    for key, default in DEFAULT_CONFIG.items():
        if isinstance(default, dict):
            sub = dict(default)
            extra = user.get(key, {})
            if not isinstance(extra, dict):
                raise ConfigError(f"config section {key!r} must be an object")
            sub.update(extra)
            out[key] = sub
        else:
            out[key] = user.get(key, default)
    unknown = set(user) - set(DEFAULT_CONFIG)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return out


def apply_overrides(doc: dict, assignments) -> dict:
    """Apply ``dotted.path=value`` overrides; values parse as JSON first."""
    import json as _json

    out = _json.loads(_json.dumps(doc))  # deep copy
    for item in assignments or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form path=value")
        path, raw = item.split("=", 1)
        try:
            value = _json.loads(raw)
        except _json.JSONDecodeError:
            value = raw
        node = out
        parts = path.split(".")
        for key in parts[:-1]:
            if not isinstance(node.get(key), dict):
                raise ConfigError(f"override path {path!r} does not exist")
            node = node[key]
        if parts[-1] not in node:
            raise ConfigError(f"override path {path!r} does not exist")
        node[parts[-1]] = value
    return out


def build_dataset(doc: dict) -> Dataset:
    kind = doc.get("kind")
    n = int(doc["n_train"]) + int(doc["n_eval"])
    seed = int(doc["seed"])
    if kind == "gaussian":
        return gen_gaussian(int(doc["dim"]), doc["variances"], n, seed)
    if kind == "mixture":
        return gen_labeled_mixture(
            int(doc["classes"]), int(doc["dim"]), float(doc["separation"]),
            n, seed, entropy_mc=int(doc["entropy_mc"]),
        )
    if kind == "bars":
        return gen_binary_bars(int(doc["grid_size"]), n, seed)
    raise ConfigError(f"unknown dataset kind {kind!r}")


def build_model_config(doc: dict) -> HvaeConfig:
    try:
        return HvaeConfig(
            data_dim=int(doc["data_dim"]),
            latent_dims=tuple(doc["latent_dims"]),
            likelihood=doc["likelihood"],
            sigma_x=float(doc["sigma_x"]),
            inference=doc["inference"],
            hidden=tuple(doc["hidden"]),
            activation=doc["activation"],
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad model config: {exc}") from exc


def build_train_spec(doc: dict, seed: int) -> TrainSpec:
    try:
        return TrainSpec(
            steps=int(doc["steps"]),
            batch_size=int(doc["batch_size"]),
            lr=float(doc["lr"]),
            adam_beta1=float(doc["adam_beta1"]),
            adam_beta2=float(doc["adam_beta2"]),
            adam_eps=float(doc["adam_eps"]),
            seed=seed,
            eval_interval=int(doc["eval_interval"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad train config: {exc}") from exc


@dataclass(frozen=True)
class EvalConfig:
    recon_mode: str = "mode"
    gen_mode: str = "mode"
    n_generate: int = 1024
    mi_mc: int = 1
    knn_k: int = 5

    @classmethod
    def from_doc(cls, doc: dict) -> "EvalConfig":
        ev = cls(
            recon_mode=doc["recon_mode"],
            gen_mode=doc["gen_mode"],
            n_generate=int(doc["n_generate"]),
            mi_mc=int(doc["mi_mc"]),
            knn_k=int(doc["knn_k"]),
        )
        if ev.recon_mode not in ("mode", "sample") or ev.gen_mode not in ("mode", "sample"):
            raise ConfigError("recon_mode and gen_mode must be 'mode' or 'sample'")
        if ev.n_generate < 2 or ev.mi_mc < 1 or ev.knn_k < 1:
            raise ConfigError("bad eval sizes")
        return ev


def validate_cross_constraints(doc: dict):
    data, model = doc["dataset"], doc["model"]
    kind = data["kind"]
    if kind == "bars":
        expected_dim = int(data["grid_size"]) ** 2
        if model["likelihood"] != "bernoulli":
            raise ConfigError("bars data needs the bernoulli likelihood")
    else:
        expected_dim = int(data["dim"])
        if model["likelihood"] != "gaussian":
            raise ConfigError(f"{kind} data needs the gaussian likelihood")
    if int(model["data_dim"]) != expected_dim:
        raise ConfigError(
            f"model data_dim {model['data_dim']} != dataset dim {expected_dim}"
        )
    if int(data["n_train"]) < 1 or int(data["n_eval"]) < 4:
        raise ConfigError("need n_train >= 1 and n_eval >= 4")


# -- grid ----------------------------------------------------------------


@dataclass(frozen=True)
class GridAxis:
    low: float
    high: float
    count: int
    log: bool = True

    def __post_init__(self):
        if not self.low > 0:
            raise ConfigError("grid minimum must be positive")
        if self.count < 1:
            raise ConfigError("grid count must be >= 1")
        if self.count > 1 and not self.high > self.low:
            raise ConfigError("grid maximum must exceed the minimum")

    def values(self) -> list:
        if self.count == 1:
            return [self.low]
        if self.log:
            ratio = self.high / self.low
            return [
                self.low * ratio ** (i / (self.count - 1)) for i in range(self.count)
            ]
        step = (self.high - self.low) / (self.count - 1)
        return [self.low + i * step for i in range(self.count)]

    @classmethod
    def from_doc(cls, doc: dict) -> "GridAxis":
        try:
            return cls(
                low=float(doc["min"]), high=float(doc["max"]),
                count=int(doc["count"]), log=bool(doc.get("log", True)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad grid axis: {exc}") from exc


def resolve_bins(doc_bins, L: int):
    """Two layer bins (top first); each must be a contiguous block."""
    if doc_bins is None:
        if L != 2:
            raise ConfigError("grids over L > 2 layers need an explicit bins map")
        return ((2,), (1,))
    if len(doc_bins) != 2:
        raise ConfigError("exactly two bins are supported (one per grid axis)")
    top = tuple(sorted(int(b) for b in doc_bins[0]))
    bottom = tuple(sorted(int(b) for b in doc_bins[1]))
    if sorted(top + bottom) != list(range(1, L + 1)):
        raise ConfigError(f"bins must partition layers 1..{L}")
    if top != tuple(range(min(top), L + 1)):
        raise ConfigError("the first bin must be the top block of layers")
    return top, bottom


def betas_for_bins(beta_top: float, beta_bottom: float, bins, L: int) -> BetaVector:
    top, _ = bins
    return BetaVector(
        [beta_top if ell in top else beta_bottom for ell in range(L, 0, -1)]
    )


def derive_cell_seed(global_seed: int, cell_index: int) -> int:
    return splitmix64(int(global_seed) ^ int(cell_index))


# -- evaluation -------------------------------------------------------------


def fit_data_classifier(train_ds: Dataset):
    """Reference classifier on raw data; None for unlabeled datasets."""
    if train_ds.n_classes < 2:
        return None
    return fit_probe("logreg", train_ds.x, train_ds.y)


def evaluate_model(model: HvaeModel, train_ds: Dataset, eval_ds: Dataset,
                   data_classifier, ev: EvalConfig, seed: int,
                   boundary_ell: Optional[int] = None) -> RunMetrics:
    """All evaluation quantities of one trained model on held-out data.

    ``boundary_ell`` is the layer whose inferred mean feeds the coarse
    probes; its accumulated top-down rate drives the corresponding
    accuracy bound. Defaults to layer 2.
    """
    cfg = model.config
    L = cfg.L
    boundary = 2 if boundary_ell is None else int(boundary_ell)
    if not 1 <= boundary <= L:
        raise ValueError("boundary layer outside the hierarchy")
    ns = NoiseSource(seed)

    trace = infer(model, eval_ds.x, ns.split(11))
    rates = layer_rates(trace)
    total_rate = float(sum(rates))
    dist = hvae.distortion(model, trace, eval_ds.x)
    elbo = -(dist + total_rate)

    x_hat = reconstruct(model, eval_ds.x, ns.split(12), mode=ev.recon_mode)
    peak = float(train_ds.x.max() - train_ds.x.min()) if len(train_ds) else 1.0
    psnr_db = psnr(eval_ds.x, x_hat, max_value=peak if peak > 0 else 1.0)

    if data_classifier is not None:
        samples = generate(model, ev.n_generate, ns.split(13), mode=ev.gen_mode)
        score, diversity, sharpness = inception_score(samples, data_classifier)
    else:
        score = diversity = sharpness = math.nan

    mi, mi_se = [], []
    labeled = eval_ds.n_classes >= 2
    for ell in range(L, 0, -1):
        if not labeled:
            mi.append(math.nan)
            mi_se.append(math.nan)
            continue
        lay = trace.layer(ell)
        est, se = mi_estimate(lay.q_mean, lay.q_std, eval_ds.y, ns.split(20 + ell), ev.mi_mc)
        mi.append(est)
        mi_se.append(se)

    probe_accuracies, accuracy_bounds = {}, {}
    sampled_probe_accuracies = {}
    if labeled:
        half = len(eval_ds) // 2
        for ell in sorted({boundary, 1}, reverse=True):
            feats = trace.mode(ell)
            code = trace.layer(ell).z
            for kind in ("logreg", "knn"):
                clf = fit_probe(kind, feats[:half], eval_ds.y[:half], k=ev.knn_k)
                probe_accuracies[(kind, ell)] = predict_accuracy(
                    clf, feats[half:], eval_ds.y[half:]
                )
                sclf = fit_probe(kind, code[:half], eval_ds.y[:half], k=ev.knn_k)
                sampled_probe_accuracies[(kind, ell)] = predict_accuracy(
                    sclf, code[half:], eval_ds.y[half:]
                )
            accumulated = float(sum(rates[: L - ell + 1]))
            accuracy_bounds[ell] = accuracy_bound_inverse(
                accumulated, eval_ds.label_entropy_nats, eval_ds.n_classes
            )

    return RunMetrics(
        distortion=dist,
        psnr=psnr_db,
        layer_rates=rates,
        total_rate=total_rate,
        elbo=elbo,
        inception=score,
        diversity=diversity,
        sharpness=sharpness,
        mi=tuple(mi),
        mi_se=tuple(mi_se),
        probe_accuracies=probe_accuracies,
        accuracy_bounds=accuracy_bounds,
        sampled_probe_accuracies=sampled_probe_accuracies,
    )


# -- run records and CSV -----------------------------------------------------


@dataclass
class RunRecord:
    grid_i: int
    grid_j: int
    beta_top: float
    beta_bottom: float
    seed: int
    steps: int
    status: str = "ok"
    metrics: Optional[RunMetrics] = None
    boundary_ell: int = 2
    wall_ms: float = 0.0

    def csv_row(self) -> list:
        m = self.metrics
        if m is None:
            vals = {name: math.nan for name in CSV_COLUMNS}
        else:
            L = len(m.layer_rates)
            top_rate = float(sum(m.layer_rates[: L - self.boundary_ell + 1]))
            vals = {
                "D": m.distortion,
                "R_z2": top_rate,
                "R_z1_given_z2": m.total_rate - top_rate,
                "R_total": m.total_rate,
                "psnr": m.psnr,
                "elbo": m.elbo,
                "is": m.inception,
                "diversity": m.diversity,
                "sharpness": m.sharpness,
                "mi_z2": m.mi[L - self.boundary_ell] if m.mi else math.nan,
                "mi_z1": m.mi[L - 1] if m.mi else math.nan,
                "acc_logreg_mu2": m.probe_accuracies.get(("logreg", self.boundary_ell), math.nan),
                "acc_knn_mu2": m.probe_accuracies.get(("knn", self.boundary_ell), math.nan),
                "acc_logreg_mu1": m.probe_accuracies.get(("logreg", 1), math.nan),
                "acc_knn_mu1": m.probe_accuracies.get(("knn", 1), math.nan),
                "bound_z2": m.accuracy_bounds.get(self.boundary_ell, math.nan),
                "bound_z1": m.accuracy_bounds.get(1, math.nan),
            }
        vals.update(
            grid_i=self.grid_i, grid_j=self.grid_j,
            beta_2=self.beta_top, beta_1=self.beta_bottom,
            seed=self.seed, steps=self.steps,
            wall_ms=0,  # kept deterministic; measured time goes to timings.csv
            status=self.status,
        )
        return [_format_cell(vals[name]) for name in CSV_COLUMNS]


def _format_cell(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def write_runs_csv(records, path, meta=()):
    """Rows in grid order; extra ``meta`` strings become comment lines."""
    lines = [f"# runs.csv format_version={CSV_FORMAT_VERSION}"]
    lines += [f"# {m}" for m in meta]
    lines.append(",".join(CSV_COLUMNS))
    for rec in records:
        lines.append(",".join(rec.csv_row()))
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def run_meta(doc: dict) -> list:
    """Provenance comments: training hyperparameters are our choices, not
    given quantities, so they ride along with every sweep artifact."""
    doc = merged_config(doc)
    t = doc["train"]
    return [
        f"global_seed={doc['seed']}",
        (f"train steps={t['steps']} batch_size={t['batch_size']} lr={t['lr']!r} "
         f"adam=({t['adam_beta1']!r},{t['adam_beta2']!r},{t['adam_eps']!r})"),
    ]


def read_runs_csv(path):
    """Rows as dicts of strings, comment lines skipped."""
    with open(path, newline="") as fh:
        lines = [ln.rstrip("\n") for ln in fh if not ln.startswith("#")]
    if not lines:
        raise ValueError("empty runs csv")
    header = lines[0].split(",")
    rows = [dict(zip(header, ln.split(","))) for ln in lines[1:] if ln]
    return rows, header


def write_timings_csv(records, path):
    with open(path, "w", newline="") as fh:
        fh.write("grid_i,grid_j,wall_ms\n")
        for rec in records:
            fh.write(f"{rec.grid_i},{rec.grid_j},{rec.wall_ms:.1f}\n")


# -- cell execution ------------------------------------------------------------


def _run_cell(payload) -> RunRecord:
    (cell_index, i, j, beta_top, beta_bottom, model_doc, train_doc, eval_doc,
     global_seed, bins, dataset, n_train, data_classifier) = payload
    config = build_model_config(model_doc)
    bins = resolve_bins(bins, config.L)
    boundary = min(bins[0])
    betas = betas_for_bins(beta_top, beta_bottom, bins, config.L)
    run_seed = derive_cell_seed(global_seed, cell_index)
    spec = build_train_spec(train_doc, seed=run_seed)
    ev = EvalConfig.from_doc(eval_doc)
    train_ds, eval_ds = dataset.split(n_train)

    record = RunRecord(
        grid_i=i, grid_j=j, beta_top=beta_top, beta_bottom=beta_bottom,
        seed=run_seed, steps=spec.steps, boundary_ell=boundary,
    )
    started = time.perf_counter()
    try:
        model, _ = train(config, train_ds, betas, spec)
        record.metrics = evaluate_model(
            model, train_ds, eval_ds, data_classifier, ev,
            seed=splitmix64(run_seed ^ _EVAL_STREAM), boundary_ell=boundary,
        )
    except NumericError:
        record.status = "numeric_error"
    except Exception:
        record.status = "error"
    record.wall_ms = 1000.0 * (time.perf_counter() - started)
    return record


def run_sweep(doc: dict, jobs: int = 1):
    """Train and evaluate every grid cell; returns records in grid order."""
    doc = merged_config(doc)
    validate_cross_constraints(doc)
    model_doc, train_doc, eval_doc = doc["model"], doc["train"], doc["eval"]
    config = build_model_config(model_doc)
    bins = resolve_bins(doc["grid"].get("bins"), config.L)
    axes_doc = doc["grid"].get("axes")
    if not isinstance(axes_doc, (list, tuple)) or len(axes_doc) != 2:
        raise ConfigError("grid.axes must hold exactly two axes")
    axis_top = GridAxis.from_doc(axes_doc[0])
    axis_bottom = GridAxis.from_doc(axes_doc[1])
    EvalConfig.from_doc(eval_doc)

    dataset = build_dataset(doc["dataset"])
    n_train = int(doc["dataset"]["n_train"])
    train_ds, _ = dataset.split(n_train)
    data_classifier = fit_data_classifier(train_ds)

    tops = axis_top.values()
    bottoms = axis_bottom.values()
    payloads = []
    for i, beta_top in enumerate(tops):
        for j, beta_bottom in enumerate(bottoms):
            cell_index = i * len(bottoms) + j
            payloads.append((
                cell_index, i, j, beta_top, beta_bottom,
                model_doc, train_doc, eval_doc, int(doc["seed"]),
                doc["grid"].get("bins"), dataset, n_train, data_classifier,
            ))

    if jobs <= 1 or len(payloads) == 1:
        records = [_run_cell(p) for p in payloads]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(_run_cell, payloads))

    if all(rec.status != "ok" for rec in records):
        raise NumericError("every sweep cell failed")
    return records


def run_single(doc: dict):
    """Train the configured betas once; the exact 1x1-sweep cell."""
    doc = merged_config(doc)
    validate_cross_constraints(doc)
    config = build_model_config(doc["model"])
    bins = resolve_bins(doc["grid"].get("bins"), config.L)
    boundary = min(bins[0])
    try:
        betas = BetaVector(doc["betas"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad betas: {exc}") from exc
    if len(betas) != config.L:
        raise ConfigError(f"need {config.L} betas, got {len(betas)}")
    run_seed = derive_cell_seed(int(doc["seed"]), 0)
    spec = build_train_spec(doc["train"], seed=run_seed)
    ev = EvalConfig.from_doc(doc["eval"])

    dataset = build_dataset(doc["dataset"])
    train_ds, eval_ds = dataset.split(int(doc["dataset"]["n_train"]))
    data_classifier = fit_data_classifier(train_ds)

    model, trace = train(config, train_ds, betas, spec)
    metrics = evaluate_model(
        model, train_ds, eval_ds, data_classifier, ev,
        seed=splitmix64(run_seed ^ _EVAL_STREAM), boundary_ell=boundary,
    )
    return model, metrics, trace, run_seed, betas


def _jsonable(value):
    """Strict-JSON scalar: non-finite floats become null."""
    value = float(value)
    return value if math.isfinite(value) else None


def metrics_to_doc(metrics: RunMetrics, betas: BetaVector, seed: int) -> dict:
    """JSON-ready metrics document with deterministic key order."""
    return {
        "format_version": 1,
        "betas": list(betas),
        "seed": seed,
        "distortion": metrics.distortion,
        "psnr": _jsonable(metrics.psnr),
        "layer_rates": list(metrics.layer_rates),
        "total_rate": metrics.total_rate,
        "elbo": metrics.elbo,
        "is": _jsonable(metrics.inception),
        "diversity": _jsonable(metrics.diversity),
        "sharpness": _jsonable(metrics.sharpness),
        "mi": [_jsonable(v) for v in metrics.mi],
        "mi_se": [_jsonable(v) for v in metrics.mi_se],
        "probe_accuracies": {
            f"{kind}_mu{ell}": acc for (kind, ell), acc in sorted(metrics.probe_accuracies.items())
        },
        "accuracy_bounds": {
            f"mu{ell}": b for ell, b in sorted(metrics.accuracy_bounds.items())
        },
        "sampled_probe_accuracies": {
            f"{kind}_z{ell}": acc
            for (kind, ell), acc in sorted(metrics.sampled_probe_accuracies.items())
        },
    }


def resolve_jobs(doc_jobs, flag_jobs) -> int:
    """Precedence: --jobs flag, config, HITLAB_JOBS, cpu count."""
    for candidate in (flag_jobs, doc_jobs, os.environ.get("HITLAB_JOBS")):
        if candidate is not None:
            try:
                jobs = int(candidate)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad jobs value {candidate!r}") from exc
            if jobs < 1:
                raise ConfigError("jobs must be >= 1")
            return jobs
    return os.cpu_count() or 1
