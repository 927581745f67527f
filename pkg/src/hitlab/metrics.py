"""Evaluation quantities: reconstruction, generation, and probe metrics.

Includes the peak signal-to-noise ratio, the classifier-based sample
quality score with its exact diversity/sharpness factorization, a
mixture-of-posteriors mutual-information estimator with jackknife
standard errors, the monotone map between mutual information and best
achievable classification accuracy (with its inverse), and two small
probe classifiers trained on latent features.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .distributions import NoiseSource

PROBE_KINDS = ("logreg", "knn")


def psnr(x: np.ndarray, x_hat: np.ndarray, max_value: float) -> float:
    """10 log10(max^2 / MSE) in dB; +inf when the reconstruction is exact."""
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise ValueError("x and x_hat must have the same shape")
    if x.size == 0:
        raise ValueError("empty batch")
    if not max_value > 0:
        raise ValueError("max_value must be positive")
    mse = float(np.mean((x - x_hat) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(max_value * max_value / mse)


# -- sample quality -----------------------------------------------------


def _entropy_rows(p: np.ndarray) -> np.ndarray:
    """Row entropies with the 0 log 0 = 0 convention."""
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0.0, p * np.log(p), 0.0)
    return -terms.sum(axis=-1)


def inception_score(gen_samples: np.ndarray, classifier: "ProbeClassifier"):
    """Sample quality from a trained classifier's predictives.

    Returns ``(score, diversity, sharpness)`` where the score is
    ``exp(mean KL[p(y|x) || mean predictive])``, diversity is the exp
    entropy of the mean predictive, and sharpness the exp of minus the
    mean conditional entropy. The product identity holds exactly.
    """
    probs = classifier.predict_proba(gen_samples)
    if probs.shape[0] < 2:
        raise ValueError("need at least two samples")
    if np.any(probs < 0.0) or np.any(np.abs(probs.sum(axis=1) - 1.0) > 1e-8):
        raise ValueError("classifier produced degenerate predictives")
    p_bar = probs.mean(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_ratio = np.where(probs > 0.0, np.log(probs) - np.log(p_bar), 0.0)
    mean_kl = float(np.mean(np.sum(np.where(probs > 0.0, probs * log_ratio, 0.0), axis=1)))
    score = math.exp(mean_kl)
    diversity = math.exp(float(_entropy_rows(p_bar[None, :])[0]))
    sharpness = math.exp(-float(np.mean(_entropy_rows(probs))))
    return score, diversity, sharpness


# -- mutual information --------------------------------------------------


def _mixture_log_density(z: np.ndarray, mus: np.ndarray, stds: np.ndarray,
                         component_cols: np.ndarray) -> np.ndarray:
    """log of the equal-weight Gaussian mixture over selected components."""
    out = np.empty(z.shape[0])
    chunk = max(1, int(2**22 // max(mus.shape[0] * mus.shape[1], 1)))
    log_norm = -np.log(stds[component_cols]).sum(axis=1) \
        - 0.5 * mus.shape[1] * math.log(2.0 * math.pi)
    sub_mu = mus[component_cols]
    sub_std = stds[component_cols]
    for start in range(0, z.shape[0], chunk):
        stop = min(start + chunk, z.shape[0])
        diff = (z[start:stop, None, :] - sub_mu[None, :, :]) / sub_std[None, :, :]
        log_comp = log_norm[None, :] - 0.5 * np.sum(diff * diff, axis=2)
        peak = log_comp.max(axis=1)
        out[start:stop] = peak + np.log(
            np.mean(np.exp(log_comp - peak[:, None]), axis=1)
        )
    return out


def mi_estimate(mus: np.ndarray, stds: np.ndarray, labels: np.ndarray,
                noise: NoiseSource, n_mc: int = 1):
    """Mutual information between labels and an inferred latent, in nats.

    Monte Carlo estimator over per-datapoint inference Gaussians: draw
    ``z_i`` from each datapoint's Gaussian, then average
    ``log q(z_i | y_i) - log q(z_i)`` where both densities are
    equal-weight mixtures of the per-datapoint Gaussians (restricted to
    the class, and over everything). ``n_mc`` repeats the draw over the
    whole batch. Returns ``(estimate, jackknife standard error)``.
    """
    mus = np.asarray(mus, dtype=np.float64)
    stds = np.asarray(stds, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if mus.shape != stds.shape or mus.ndim != 2:
        raise ValueError("means and stds must be matching (n, d) arrays")
    if labels.shape != (mus.shape[0],):
        raise ValueError("need one label per row")
    classes, counts = np.unique(labels, return_counts=True)
    if len(classes) < 2:
        raise ValueError("need at least two classes present")
    if counts.min() < 2:
        raise ValueError("every class needs at least two samples")

    n = mus.shape[0]
    contributions = np.empty(n * n_mc)
    all_cols = np.arange(n)
    class_cols = {c: np.where(labels == c)[0] for c in classes}
    for r in range(n_mc):
        z = mus + stds * noise.normal(mus.shape)
        log_q = _mixture_log_density(z, mus, stds, all_cols)
        log_q_given = np.empty(n)
        for c in classes:
            cols = class_cols[c]
            rows = cols  # evaluate each draw under its own class mixture
            log_q_given[rows] = _mixture_log_density(z[rows], mus, stds, cols)
        contributions[r * n : (r + 1) * n] = log_q_given - log_q

    est = float(contributions.mean())
    se = _jackknife_se(contributions)
    return est, se


def _jackknife_se(values: np.ndarray) -> float:
    n = len(values)
    if n < 2:
        return math.inf
    total = values.sum()
    loo = (total - values) / (n - 1)
    return float(np.sqrt((n - 1) / n * np.sum((loo - loo.mean()) ** 2)))


# -- accuracy bound -------------------------------------------------------


def binary_entropy(alpha: float) -> float:
    """Entropy of a coin in nats, continuous at the endpoints."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    if alpha in (0.0, 1.0):
        return 0.0
    return -alpha * math.log(alpha) - (1.0 - alpha) * math.log(1.0 - alpha)


def accuracy_bound_f(alpha: float, label_entropy: float, n_classes: int) -> float:
    """Information needed to reach accuracy ``alpha`` with M classes.

    ``f(alpha) = H[y] - H2(alpha) - (1 - alpha) log(M - 1)``, strictly
    increasing on [max prior, 1].
    """
    if n_classes < 2:
        raise ValueError("need at least two classes")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    return (
        label_entropy
        - binary_entropy(alpha)
        - (1.0 - alpha) * math.log(n_classes - 1)
    )


def accuracy_bound_inverse(value: float, label_entropy: float, n_classes: int,
                           max_prior: Optional[float] = None) -> float:
    """Best achievable accuracy given an information budget in nats.

    Inverts the monotone map by bisection on [max prior, 1]. Budgets
    above ``f(1) = H[y]`` clamp to 1; budgets below ``f(max prior)``
    clamp to the left end. ``max_prior`` defaults to uniform labels.
    """
    if n_classes < 2:
        raise ValueError("need at least two classes")
    lo = 1.0 / n_classes if max_prior is None else float(max_prior)
    if not 0.0 < lo <= 1.0:
        raise ValueError("max_prior must lie in (0, 1]")
    if value >= accuracy_bound_f(1.0, label_entropy, n_classes):
        return 1.0
    if value <= accuracy_bound_f(lo, label_entropy, n_classes):
        return lo
    hi = 1.0
    # bisect to interval width ~1e-16 so the inverse is sharp even where
    # the map is nearly flat; the residual |f(mid) - value| ends far below
    # the 1e-10 contract
    for _ in range(64):
        mid = 0.5 * (lo + hi)
        if accuracy_bound_f(mid, label_entropy, n_classes) < value:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# -- probe classifiers -----------------------------------------------------


class ProbeClassifier:
    """Logistic regression or exact kNN over latent features.

    Logistic regression standardizes features, then runs full-batch
    gradient descent until the gradient norm drops below 1e-6 or 1e4
    iterations pass. kNN stores the training set and breaks voting ties
    toward the smallest class index.
    """

    def __init__(self, kind: str, k: int = 5):
        if kind not in PROBE_KINDS:
            raise ValueError(f"unknown probe kind {kind!r}")
        if k < 1:
            raise ValueError("k must be >= 1")
        self.kind = kind
        self.k = k
        self.classes_ = None
        self._w = None
        self._b = None
        self._mu = None
        self._scale = None
        self._train_x = None
        self._train_y = None

    def fit(self, features: np.ndarray, labels: np.ndarray) -> "ProbeClassifier":
        x = np.asarray(features, dtype=np.float64)
        y = np.asarray(labels, dtype=np.int64)
        if x.ndim != 2 or y.shape != (x.shape[0],):
            raise ValueError("features must be (n, d) with one label per row")
        if not np.all(np.isfinite(x)):
            raise ValueError("features must be finite")
        self.classes_ = np.unique(y)
        if len(self.classes_) < 2:
            raise ValueError("training set has a single class")
        if self.kind == "knn":
            self._train_x = x
            self._train_y = y
            return self
        self._fit_logreg(x, y)
        return self

    def _fit_logreg(self, x, y):
        self._mu = x.mean(axis=0)
        scale = x.std(axis=0)
        self._scale = np.where(scale < 1e-12, 1.0, scale)
        xt = (x - self._mu) / self._scale
        n, d = xt.shape
        m = len(self.classes_)
        onehot = (y[:, None] == self.classes_[None, :]).astype(np.float64)
        w = np.zeros((d, m))
        b = np.zeros(m)
        # descent step sized from the curvature bound of the softmax loss
        lr = 2.0 / (float(np.mean(np.sum(xt * xt, axis=1))) + 1.0)
        for _ in range(10_000):
            p = _softmax(xt @ w + b)
            err = (p - onehot) / n
            gw = xt.T @ err
            gb = err.sum(axis=0)
            gnorm = math.sqrt(float(np.sum(gw * gw)) + float(np.sum(gb * gb)))
            if gnorm < 1e-6:
                break
            w -= lr * gw
            b -= lr * gb
        self._w, self._b = w, b

    def predict_proba(self, features: np.ndarray) -> np.ndarray:
        x = np.asarray(features, dtype=np.float64)
        if self.classes_ is None:
            raise ValueError("probe is not fitted")
        if self.kind == "logreg":
            xt = (x - self._mu) / self._scale
            return _softmax(xt @ self._w + self._b)
        votes = np.zeros((x.shape[0], len(self.classes_)))
        for row, neighbors in enumerate(self._neighbor_labels(x)):
            for lab in neighbors:
                votes[row, np.searchsorted(self.classes_, lab)] += 1.0
        return votes / self.k

    def predict(self, features: np.ndarray) -> np.ndarray:
        proba = self.predict_proba(features)
        # argmax ties resolve to the smallest class index via argmax order
        return self.classes_[np.argmax(proba, axis=1)]

    def _neighbor_labels(self, x):
        if self._train_x is None:
            raise ValueError("probe is not fitted")
        k = min(self.k, self._train_x.shape[0])
        chunk = max(1, int(2**22 // max(self._train_x.shape[0], 1)))
        for start in range(0, x.shape[0], chunk):
            block = x[start : start + chunk]
            d2 = (
                np.sum(block * block, axis=1)[:, None]
                - 2.0 * block @ self._train_x.T
                + np.sum(self._train_x * self._train_x, axis=1)[None, :]
            )
            # stable order on (distance, train index) makes ties deterministic
            order = np.lexsort(
                (np.broadcast_to(np.arange(d2.shape[1]), d2.shape), d2), axis=1
            )[:, :k]
            for row in range(block.shape[0]):
                yield self._train_y[order[row]]


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def fit_probe(kind: str, features: np.ndarray, labels: np.ndarray,
              seed: int = 0, k: int = 5) -> ProbeClassifier:
    """Train a probe on latent features.

    Both probe kinds are deterministic; ``seed`` is accepted for
    interface stability.
    """
    del seed
    return ProbeClassifier(kind, k=k).fit(features, labels)


def predict_accuracy(clf: ProbeClassifier, features: np.ndarray,
                     labels: np.ndarray) -> float:
    """Fraction of correct argmax predictions on held-out features."""
    labels = np.asarray(labels, dtype=np.int64)
    return float(np.mean(clf.predict(features) == labels))


# -- aggregate record -------------------------------------------------------


@dataclass(frozen=True)
class RunMetrics:
    """All evaluation quantities of one trained model.

    Layer-indexed tuples are ordered coarse to fine (layer L first), the
    same order as the loss components. ``probe_accuracies`` maps
    ``(kind, layer)`` to held-out accuracy; ``accuracy_bounds`` maps a
    layer to the bound implied by the rate accumulated from the top down
    to that layer.
    """

    distortion: float
    psnr: float
    layer_rates: tuple
    total_rate: float
    elbo: float
    inception: float
    diversity: float
    sharpness: float
    mi: tuple = ()
    mi_se: tuple = ()
    probe_accuracies: dict = field(default_factory=dict)
    accuracy_bounds: dict = field(default_factory=dict)
    # probes retrained on the sampled code rather than its mode: the
    # accuracy the information bound actually constrains
    sampled_probe_accuracies: dict = field(default_factory=dict)

    def __post_init__(self):
        if abs(self.total_rate - sum(self.layer_rates)) > 1e-9:
            raise ValueError("total rate must equal the sum of layer rates")
        product = self.diversity * self.sharpness
        if math.isfinite(self.inception) and abs(
            self.inception - product
        ) > 1e-9 * max(abs(self.inception), 1e-300):
            raise ValueError("score must factor exactly into diversity * sharpness")
        for table in (self.probe_accuracies, self.sampled_probe_accuracies):
            for key, acc in table.items():
                if not 0.0 <= acc <= 1.0:
                    raise ValueError(f"accuracy {key} outside [0, 1]")
