"""Procedural labeled datasets with known or oracle-computed entropy.

Every generator is deterministic per seed and, where possible, carries
the differential (or discrete) entropy of its own sampling distribution
so that information-theoretic bounds can be checked numerically. Dataset
sampling uses numpy's PCG64 generator keyed by the seed; the package's
own noise stream is reserved for model-side sampling.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np


@dataclass(frozen=True)
class Dataset:
    """In-memory samples with labels and optional entropy metadata.

    ``entropy_nats`` is the entropy of the sampling distribution of x
    (differential for continuous data, Shannon for discrete);
    ``entropy_se_nats`` is nonzero when the value came from a Monte Carlo
    oracle. ``label_entropy_nats`` is the entropy of the label marginal.
    """

    x: np.ndarray
    y: np.ndarray
    n_classes: int
    label_entropy_nats: float
    entropy_nats: Optional[float] = None
    entropy_se_nats: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=np.float64))
        object.__setattr__(self, "y", np.asarray(self.y, dtype=np.int64))
        if self.x.ndim != 2:
            raise ValueError("x must be a (n, d) matrix")
        if self.y.shape != (self.x.shape[0],):
            raise ValueError("need one label per sample")
        if self.n_classes < 1:
            raise ValueError("n_classes must be >= 1")
        if len(self.y) and (self.y.min() < 0 or self.y.max() >= self.n_classes):
            raise ValueError("labels outside [0, n_classes)")

    def __len__(self):
        return self.x.shape[0]

    @property
    def dim(self):
        return self.x.shape[1]

    def split(self, n_head: int):
        """Disjoint (head, tail) datasets sharing all metadata."""
        if not 0 <= n_head <= len(self):
            raise ValueError("split point outside the dataset")
        head = Dataset(self.x[:n_head], self.y[:n_head], self.n_classes,
                       self.label_entropy_nats, self.entropy_nats, self.entropy_se_nats)
        tail = Dataset(self.x[n_head:], self.y[n_head:], self.n_classes,
                       self.label_entropy_nats, self.entropy_nats, self.entropy_se_nats)
        return head, tail


def gen_gaussian(dim: int, variances, n: int, seed: int) -> Dataset:
    """Centered diagonal Gaussian with closed-form differential entropy."""
    var = np.broadcast_to(np.asarray(variances, dtype=np.float64), (dim,)).copy()
    if np.any(var <= 0):
        raise ValueError("variances must be positive")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, dim)) * np.sqrt(var)
    entropy = 0.5 * float(np.sum(np.log(2.0 * math.pi * math.e * var)))
    return Dataset(
        x=x,
        y=np.zeros(n, dtype=np.int64),
        n_classes=1,
        label_entropy_nats=0.0,
        entropy_nats=entropy,
        entropy_se_nats=0.0,
    )


def _mixture_means(n_classes: int, dim: int, separation: float) -> np.ndarray:
    """Component means on a circle of the given radius in the first plane."""
    means = np.zeros((n_classes, dim))
    angles = 2.0 * math.pi * np.arange(n_classes) / n_classes
    means[:, 0] = separation * np.cos(angles)
    if dim > 1:
        means[:, 1] = separation * np.sin(angles)
    return means


def mixture_log_density(x: np.ndarray, means: np.ndarray) -> np.ndarray:
    """Exact log density of the equal-weight unit-covariance mixture."""
    x = np.asarray(x, dtype=np.float64)
    m, d = means.shape
    # (n, m) log component densities
    diff = x[:, None, :] - means[None, :, :]
    log_comp = -0.5 * np.sum(diff * diff, axis=2) - 0.5 * d * math.log(2.0 * math.pi)
    peak = log_comp.max(axis=1, keepdims=True)
    return (peak[:, 0] + np.log(np.mean(np.exp(log_comp - peak), axis=1)))


def gen_labeled_mixture(n_classes: int, dim: int, separation: float, n: int,
                        seed: int, entropy_mc: int = 1_000_000) -> Dataset:
    """Equiprobable Gaussian mixture with labels; MC entropy oracle.

    There is no closed form for the mixture entropy, so it is estimated
    from ``entropy_mc`` fresh samples and stored with its standard error.
    """
    if n_classes < 2:
        raise ValueError("a labeled mixture needs at least two classes")
    if separation < 0:
        raise ValueError("separation must be nonnegative")
    if dim < 2:
        raise ValueError("mixture datasets need dim >= 2")
    means = _mixture_means(n_classes, dim, separation)
    rng = np.random.default_rng(seed)
    y = rng.integers(n_classes, size=n)
    x = means[y] + rng.standard_normal((n, dim))

    oracle_rng = np.random.default_rng([int(seed) & 0xFFFFFFFF, 0x5EED])
    neg_logs = np.empty(entropy_mc)
    chunk = 100_000
    for start in range(0, entropy_mc, chunk):
        stop = min(start + chunk, entropy_mc)
        yy = oracle_rng.integers(n_classes, size=stop - start)
        xx = means[yy] + oracle_rng.standard_normal((stop - start, dim))
        neg_logs[start:stop] = -mixture_log_density(xx, means)
    entropy = float(neg_logs.mean())
    se = float(neg_logs.std(ddof=1) / math.sqrt(entropy_mc))

    return Dataset(
        x=x,
        y=y,
        n_classes=n_classes,
        label_entropy_nats=math.log(n_classes),
        entropy_nats=entropy,
        entropy_se_nats=se,
    )


def gen_binary_bars(grid_size: int, n: int, seed: int) -> Dataset:
    """One horizontal or vertical bar per image, uniform over positions.

    Labels 0..grid_size-1 are horizontal bars (by row), the rest vertical
    (by column). The image distribution is uniform over 2*grid_size
    distinct patterns, so its entropy is exactly log(2*grid_size).
    """
    if grid_size < 2:
        raise ValueError("grid_size must be >= 2")
    g = grid_size
    rng = np.random.default_rng(seed)
    y = rng.integers(2 * g, size=n)
    x = np.zeros((n, g * g))
    for i, lab in enumerate(y):
        img = x[i].reshape(g, g)
        if lab < g:
            img[lab, :] = 1.0
        else:
            img[:, lab - g] = 1.0
    return Dataset(
        x=x,
        y=y,
        n_classes=2 * g,
        label_entropy_nats=math.log(2 * g),
        entropy_nats=math.log(2 * g),
        entropy_se_nats=0.0,
    )


def bar_label_of_image(img_flat: np.ndarray, grid_size: int) -> int:
    """Recover the bar index from a bars image; inverse of the generator."""
    img = np.asarray(img_flat).reshape(grid_size, grid_size)
    rows = np.where(img.all(axis=1))[0]
    cols = np.where(img.all(axis=0))[0]
    if len(rows) == 1 and img.sum() == grid_size:
        return int(rows[0])
    if len(cols) == 1 and img.sum() == grid_size:
        return int(grid_size + cols[0])
    raise ValueError("not a single-bar image")


def to_csv(dataset: Dataset, path):
    """Header row, one sample per line, label in the last column."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{i}" for i in range(dataset.dim)] + ["label"])
        for row, lab in zip(dataset.x, dataset.y):
            writer.writerow([repr(float(v)) for v in row] + [int(lab)])


def from_csv(path) -> Dataset:
    """Read a dataset written by :func:`to_csv`; entropy metadata is lost."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[-1] != "label":
            raise ValueError("expected a header row ending in 'label'")
        xs, ys = [], []
        for row in reader:
            xs.append([float(v) for v in row[:-1]])
            ys.append(int(row[-1]))
    y = np.asarray(ys, dtype=np.int64)
    n_classes = int(y.max()) + 1 if len(y) else 1
    counts = np.bincount(y, minlength=n_classes) / max(len(y), 1)
    nz = counts[counts > 0]
    label_entropy = float(-(nz * np.log(nz)).sum()) if len(y) else 0.0
    return Dataset(
        x=np.asarray(xs, dtype=np.float64).reshape(len(ys), -1) if ys else np.zeros((0, len(header) - 1)),
        y=y,
        n_classes=n_classes,
        label_entropy_nats=label_entropy,
    )
