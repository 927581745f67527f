"""Desk-scale laboratory for hierarchical VAEs with per-layer rate control.

The package trains small dense hierarchical VAEs whose objective weights
each latent layer's information content separately, measures the exact
layer-wise rate decomposition, checks the information-theoretic bounds
that tie rates to downstream performance, and sweeps the multiplier grid
to select rate-optimal models on the upper convex hull.

Everything runs on float64 numpy with a built-in reverse-mode gradient
tape; results are deterministic functions of their seeds.
"""

from .datasets import Dataset, gen_binary_bars, gen_gaussian, gen_labeled_mixture
from .diffcore import Network, NumericError, ParameterSet, fd_check, gradient, lift
from .distributions import BernoulliVec, DiagGaussian, NoiseSource, splitmix64
from .hvae import (
    BetaVector,
    FrozenNoise,
    HvaeConfig,
    HvaeModel,
    InferenceTrace,
    distortion,
    frozen_noise,
    generate,
    infer,
    layer_rates,
    loss,
    reconstruct,
)
from .metrics import (
    ProbeClassifier,
    RunMetrics,
    accuracy_bound_f,
    accuracy_bound_inverse,
    fit_probe,
    inception_score,
    mi_estimate,
    predict_accuracy,
    psnr,
)
from .selection import FrontierPoint, best_per_interval, upper_convex_hull
from .sweep import EvalConfig, GridAxis, evaluate_model, run_single, run_sweep
from .training import (
    CheckpointError,
    OptimizerState,
    TrainSpec,
    TrainingTrace,
    adam_step,
    load_checkpoint,
    save_checkpoint,
    train,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
