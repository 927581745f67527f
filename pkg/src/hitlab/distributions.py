"""Diagonal-Gaussian and Bernoulli kernels plus the seeded noise stream.

Log-densities, reparameterized sampling, and closed-form KL are the
building blocks of every rate and distortion term in the package. The
formulas are written against the :mod:`hitlab.diffcore` shims, so the same
code runs on plain arrays (evaluation) and on recorded Vars (training).

:class:`NoiseSource` is a xoshiro256++ stream seeded through splitmix64.
Gaussian variates come from Box-Muller pairs; each call consumes whole
pairs, so the stream position is a deterministic function of the call
sequence. Identical seeds give identical streams within one build.
"""

from __future__ import annotations

import math

import numpy as np

from . import diffcore as dc

LOG_2PI = math.log(2.0 * math.pi)

SIGMA_MIN = 1e-6
SIGMA_MAX = 1e6

BERN_EPS = 1e-7

_MASK64 = (1 << 64) - 1


def _mix64(z: int) -> int:
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def splitmix64(x: int) -> int:
    """One splitmix64 output for a 64-bit input; also the seed-split rule."""
    return _mix64((x + 0x9E3779B97F4A7C15) & _MASK64)


class NoiseSource:
    """Deterministic pseudo-random stream, single-owner by convention.

    Independent streams for concurrent use come from :meth:`split`, which
    applies ``splitmix64(seed XOR index)``.
    """

    __slots__ = ("_seed", "_s")

    def __init__(self, seed: int):
        self._seed = int(seed) & _MASK64
        s, state = self._seed, []
        for _ in range(4):
            s = (s + 0x9E3779B97F4A7C15) & _MASK64
            state.append(_mix64(s))
        if not any(state):
            state[0] = 0x9E3779B97F4A7C15
        self._s = tuple(state)

    @property
    def seed(self) -> int:
        return self._seed

    @property
    def state(self):
        return self._s

    def clone(self) -> "NoiseSource":
        out = object.__new__(NoiseSource)
        out._seed = self._seed
        out._s = self._s
        return out

    def split(self, index: int) -> "NoiseSource":
        """A statistically independent stream keyed by ``index``."""
        return NoiseSource(splitmix64((self._seed ^ int(index)) & _MASK64))

    def _raw(self, n: int) -> np.ndarray:
        """Next ``n`` xoshiro256++ outputs as uint64."""
        s0, s1, s2, s3 = self._s
        out = np.empty(n, dtype=np.uint64)
        m = _MASK64
        for i in range(n):
            x = (s0 + s3) & m
            out[i] = (((x << 23) | (x >> 41)) + s0) & m
            t = (s1 << 17) & m
            s2 ^= s0
            s3 ^= s1
            s1 ^= s2
            s0 ^= s3
            s2 ^= t
            s3 = ((s3 << 45) | (s3 >> 19)) & m
        self._s = (s0, s1, s2, s3)
        return out

    def uniform(self, shape) -> np.ndarray:
        """Uniform float64 in [0, 1)."""
        shape = _as_shape(shape)
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        u = (self._raw(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return u.reshape(shape)

    def normal(self, shape) -> np.ndarray:
        """Standard normal float64 via Box-Muller."""
        shape = _as_shape(shape)
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        pairs = (n + 1) // 2
        raw = self._raw(2 * pairs)
        # (0, 1] for the radial draw keeps log() finite
        u1 = ((raw[0::2] >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53
        u2 = (raw[1::2] >> np.uint64(11)).astype(np.float64) * 2.0**-53
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * math.pi * u2
        z = np.empty(2 * pairs, dtype=np.float64)
        z[0::2] = r * np.cos(theta)
        z[1::2] = r * np.sin(theta)
        return z[:n].reshape(shape)

    def integers(self, upper: int, size: int) -> np.ndarray:
        """Integers in [0, upper). Modulo reduction; bias is ~2^-60 here."""
        if upper < 1:
            raise ValueError("upper must be >= 1")
        return (self._raw(int(size)) % np.uint64(upper)).astype(np.int64)


def _as_shape(shape):
    if isinstance(shape, (int, np.integer)):
        return (int(shape),)
    return tuple(int(s) for s in shape)


# -- distributions ----------------------------------------------------


class DiagGaussian:
    """Gaussian with diagonal covariance, parameterized by mean and std.

    ``mean`` and ``std`` may be arrays or recorded Vars of matching shape;
    the trailing axis is the coordinate axis, leading axes are batch.
    """

    __slots__ = ("mean", "std")

    def __init__(self, mean, std):
        mv, sv = dc.value_of(mean), dc.value_of(std)
        if mv.shape != sv.shape:
            raise ValueError(f"mean shape {mv.shape} != std shape {sv.shape}")
        if not np.all(sv > 0.0):
            raise ValueError("std must be strictly positive")
        self.mean = mean
        self.std = std

    @property
    def dim(self):
        return dc.value_of(self.mean).shape[-1]

    def log_prob(self, x):
        """Per-row log density, summed over the coordinate axis."""
        if dc.value_of(x).shape[-1] != self.dim:
            raise ValueError("x dimension does not match the distribution")
        z = (x - self.mean) / self.std
        terms = -0.5 * LOG_2PI - dc.log(self.std) - 0.5 * dc.square(z)
        return dc.sum_last(terms)

    def rsample_with(self, eps):
        """Reparameterized sample from externally supplied unit noise."""
        return self.mean + self.std * eps

    def kl(self, other: "DiagGaussian"):
        """Per-row closed-form KL divergence to ``other``, in nats."""
        if self.dim != other.dim:
            raise ValueError("KL requires matching dimensions")
        ratio = (dc.square(self.std) + dc.square(self.mean - other.mean)) / (
            2.0 * dc.square(other.std)
        )
        terms = dc.log(other.std) - dc.log(self.std) + ratio - 0.5
        return dc.sum_last(terms)


class BernoulliVec:
    """Independent Bernoulli coordinates given by success probabilities."""

    __slots__ = ("probs",)

    def __init__(self, probs):
        pv = dc.value_of(probs)
        if np.any(pv < 0.0) or np.any(pv > 1.0):
            raise ValueError("probabilities must lie in [0, 1]")
        self.probs = probs

    def log_prob(self, x):
        """Per-row log mass; probabilities clamped away from 0 and 1."""
        xv = np.asarray(dc.value_of(x), dtype=np.float64)
        if not np.all((xv == 0.0) | (xv == 1.0)):
            raise ValueError("Bernoulli log_prob needs binary data")
        p = dc.clip(self.probs, BERN_EPS, 1.0 - BERN_EPS)
        terms = xv * dc.log(p) + (1.0 - xv) * dc.log(1.0 - p)
        return dc.sum_last(terms)

    def mode(self) -> np.ndarray:
        return (dc.value_of(self.probs) > 0.5).astype(np.float64)

    def sample(self, noise: NoiseSource) -> np.ndarray:
        p = dc.value_of(self.probs)
        return (noise.uniform(p.shape) < p).astype(np.float64)


# -- functional surface ------------------------------------------------


def gauss_log_prob(dist: DiagGaussian, x):
    return dist.log_prob(x)


def gauss_rsample(dist: DiagGaussian, noise: NoiseSource):
    """Draw mean + std * eps with eps ~ N(0, I) from the stream."""
    eps = noise.normal(dc.value_of(dist.mean).shape)
    return dist.rsample_with(eps)


def gauss_kl(q: DiagGaussian, p: DiagGaussian):
    return q.kl(p)


def bern_log_prob(dist: BernoulliVec, x):
    return dist.log_prob(x)
