"""Deterministic minibatch training of one model under one beta vector.

A run is a pure function of (model config, dataset, betas, train spec).
Three independent noise streams are derived from the run seed: model
initialization, minibatch index sampling, and reparameterization noise.
Checkpoints serialize every parameter at full round-trip precision.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import hvae
from .diffcore import NumericError, ParameterSet, gradient
from .distributions import NoiseSource, splitmix64
from .hvae import BetaVector, HvaeConfig, HvaeModel

CHECKPOINT_VERSION = 1

# safety valve only; never expected to bind in a healthy run
GRAD_NORM_CAP = 100.0

_STREAM_INIT = 1
_STREAM_BATCH = 2
_STREAM_EPS = 3


class CheckpointError(RuntimeError):
    """Checkpoint file is malformed or from an incompatible version."""


@dataclass(frozen=True)
class TrainSpec:
    """Hyperparameters of one training run."""

    steps: int = 5000
    batch_size: int = 128
    lr: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    eval_interval: int = 500

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        for b in (self.adam_beta1, self.adam_beta2):
            if not 0.0 <= b < 1.0:
                raise ValueError("adam betas must lie in [0, 1)")
        if not self.adam_eps > 0:
            raise ValueError("adam_eps must be positive")
        if self.eval_interval < 1:
            raise ValueError("eval_interval must be >= 1")


@dataclass
class OptimizerState:
    """First/second moment estimates mirroring a parameter set."""

    m: ParameterSet
    v: ParameterSet
    step_count: int = 0

    @classmethod
    def zeros(cls, params: ParameterSet) -> "OptimizerState":
        z = params.map(lambda n, t: np.zeros_like(t))
        return cls(m=z, v=z, step_count=0)


@dataclass(frozen=True)
class TracePoint:
    step: int
    loss: float
    distortion: float
    layer_rates: tuple


@dataclass
class TrainingTrace:
    points: list = field(default_factory=list)

    def record(self, step, parts: hvae.LossParts):
        if self.points and step <= self.points[-1].step:
            raise ValueError("trace steps must be strictly increasing")
        self.points.append(
            TracePoint(step, parts.loss, parts.distortion, parts.layer_rates)
        )

    def final(self) -> Optional[TracePoint]:
        return self.points[-1] if self.points else None


def adam_step(params: ParameterSet, grads: ParameterSet, state: OptimizerState,
              spec: TrainSpec):
    """One bias-corrected Adam update; returns new params and state."""
    if params.names() != grads.names():
        raise ValueError("params and grads hold different names")
    t = state.step_count + 1
    b1, b2 = spec.adam_beta1, spec.adam_beta2
    new_p, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape mismatch for {name!r}")
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        new_p[name] = p - spec.lr * m_hat / (np.sqrt(v_hat) + spec.adam_eps)
        new_m[name], new_v[name] = m, v
    return ParameterSet(new_p), OptimizerState(ParameterSet(new_m), ParameterSet(new_v), t)


def clip_global_norm(grads: ParameterSet, cap: float) -> ParameterSet:
    total = np.sqrt(sum(float(np.sum(g * g)) for _, g in grads.items()))
    if total <= cap or total == 0.0:
        return grads
    scale = cap / total
    return grads.map(lambda n, g: g * scale)


def train(config: HvaeConfig, dataset, betas, spec: TrainSpec):
    """Train a fresh model; returns ``(model, trace)``.

    Deterministic for fixed arguments: repeated calls give bit-identical
    parameters. A non-finite loss aborts with the offending step and the
    component values in the message.
    """
    x_data = np.asarray(dataset.x if hasattr(dataset, "x") else dataset, dtype=np.float64)
    if x_data.ndim != 2 or x_data.shape[0] == 0:
        raise ValueError("dataset must be a nonempty (n, d) matrix")
    if x_data.shape[1] != config.data_dim:
        raise ValueError(
            f"dataset dim {x_data.shape[1]} != config data_dim {config.data_dim}"
        )
    if not isinstance(betas, BetaVector):
        betas = BetaVector(betas)
    if len(betas) != config.L:
        raise ValueError(f"need {config.L} betas, got {len(betas)}")

    base = NoiseSource(spec.seed)
    model = HvaeModel.init(config, seed=base.split(_STREAM_INIT).seed)
    batch_ns = base.split(_STREAM_BATCH)
    eps_ns = base.split(_STREAM_EPS)

    trace = TrainingTrace()
    if spec.steps == 0:
        return model, trace

    params = model.params()
    state = OptimizerState.zeros(params)
    n = x_data.shape[0]
    for step in range(spec.steps):
        idx = batch_ns.integers(n, spec.batch_size)
        x = x_data[idx]
        try:
            loss_var, parts = hvae.loss(model, x, betas, eps_ns)
        except NumericError as exc:
            raise NumericError(f"step {step}: {exc}") from exc
        if not parts.finite():
            raise NumericError(f"step {step}: non-finite loss components {parts}")
        if step % spec.eval_interval == 0 or step == spec.steps - 1:
            trace.record(step, parts)
        grads = clip_global_norm(gradient(loss_var, params), GRAD_NORM_CAP)
        params, state = adam_step(params, grads, state, spec)
        model = model.with_params(params)
    return model, trace


def derive_run_seed(global_seed: int, index: int) -> int:
    """Seed for one independent run inside a family keyed by ``index``."""
    return splitmix64(int(global_seed) ^ int(index))


# -- checkpoints -------------------------------------------------------


def _config_to_doc(config: HvaeConfig) -> dict:
    return {
        "data_dim": config.data_dim,
        "latent_dims": list(config.latent_dims),
        "likelihood": config.likelihood,
        "sigma_x": config.sigma_x,
        "inference": config.inference,
        "hidden": list(config.hidden),
        "activation": config.activation,
    }


def _config_from_doc(doc: dict) -> HvaeConfig:
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
        raise CheckpointError(f"bad model config in checkpoint: {exc}") from exc


def save_checkpoint(model: HvaeModel, path, betas=None, seed=None):
    """Write the model as a single JSON document.

    Floats serialize through repr, so a load reproduces every parameter
    exactly.
    """
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "config": _config_to_doc(model.config),
        "seed": None if seed is None else int(seed),
        "betas": None if betas is None else [float(b) for b in betas],
        "params": {
            name: {"shape": list(value.shape), "data": value.ravel().tolist()}
            for name, value in model.params().items()
        },
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def _read_doc(path) -> dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"checkpoint is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise CheckpointError("checkpoint must be a JSON object")
    if doc.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint version {doc.get('format_version')!r}"
        )
    return doc


def load_checkpoint(path) -> HvaeModel:
    """Rebuild the model saved at ``path``; exact parameter round trip."""
    doc = _read_doc(path)
    config = _config_from_doc(doc.get("config", {}))
    skeleton = HvaeModel.init(config, seed=0)
    raw = doc.get("params")
    if not isinstance(raw, dict):
        raise CheckpointError("checkpoint has no parameter table")
    flat = {}
    for name, entry in raw.items():
        try:
            arr = np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
        except (KeyError, TypeError, ValueError) as exc:
            raise CheckpointError(f"corrupted parameter {name!r}: {exc}") from exc
        flat[name] = arr
    try:
        return skeleton.with_params(ParameterSet(flat))
    except ValueError as exc:
        raise CheckpointError(str(exc)) from exc


def read_checkpoint_meta(path) -> dict:
    """Betas and seed recorded alongside the parameters."""
    doc = _read_doc(path)
    return {"betas": doc.get("betas"), "seed": doc.get("seed")}
