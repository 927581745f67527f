"""Hierarchical VAE with per-layer rate control.

Latents are numbered from L (coarsest) down to 1 (finest). The generative
stack factorizes top-down, each conditional consuming the concatenation
``[z_{l+1}, ..., z_L]``; inference factorizes in the same order with the
data vector appended to every conditioner. Two inference wirings are
supported:

* ``top_down``: every inference conditional has its own head reading
  ``[z_{l+1}, ..., z_L, x]`` directly.
* ``lvae``: a deterministic bottom-up trunk computes features of ``x``,
  per-layer heads turn those features into Gaussian estimates, and below
  the top layer the estimate is fused with the generative conditional by
  precision weighting.

Because both wirings factorize like the generative model, the total
information content of an encoding splits exactly into one rate per
layer: the KL of the top layer against the fixed N(0, I) prior plus, for
each refinement step, the KL of the inference conditional against the
generative conditional at the sampled context. The training objective is
distortion plus the beta-weighted sum of those per-layer rates; setting
every beta to 1 recovers the plain negative evidence lower bound.

All per-sample quantities are reported in nats.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import diffcore as dc
from .diffcore import Network, ParameterSet, mlp_layers
from .distributions import (
    SIGMA_MAX,
    SIGMA_MIN,
    BernoulliVec,
    DiagGaussian,
    NoiseSource,
)

LIKELIHOODS = ("gaussian", "bernoulli")
INFERENCE_STYLES = ("top_down", "lvae")

# softplus(x) = 1 at this bias, so sigma heads start near unit scale
SIGMA_HEAD_BIAS = 0.5413248546129181


@dataclass(frozen=True)
class HvaeConfig:
    """Static description of one model.

    ``latent_dims`` is ordered fine to coarse: entry 0 is z_1, the last
    entry is z_L. By convention z_L is the smallest. ``sigma_x`` is the
    fixed observation std of the Gaussian likelihood, in data units.
    """

    data_dim: int
    latent_dims: tuple
    likelihood: str = "gaussian"
    sigma_x: float = 0.71
    inference: str = "top_down"
    hidden: tuple = (16,)
    activation: str = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "latent_dims", tuple(int(d) for d in self.latent_dims))
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.data_dim < 1:
            raise ValueError("data_dim must be >= 1")
        if len(self.latent_dims) < 2:
            raise ValueError("need at least two latent layers")
        if any(d < 1 for d in self.latent_dims):
            raise ValueError("latent dims must be >= 1")
        if self.likelihood not in LIKELIHOODS:
            raise ValueError(f"unknown likelihood {self.likelihood!r}")
        if self.likelihood == "gaussian" and not self.sigma_x > 0:
            raise ValueError("sigma_x must be positive for the gaussian likelihood")
        if self.inference not in INFERENCE_STYLES:
            raise ValueError(f"unknown inference style {self.inference!r}")
        if self.inference == "lvae" and not self.hidden:
            raise ValueError("lvae wiring needs at least one hidden width")
        if any(h < 1 for h in self.hidden):
            raise ValueError("hidden widths must be >= 1")

    @property
    def L(self) -> int:
        return len(self.latent_dims)

    def dim_z(self, ell: int) -> int:
        if not 1 <= ell <= self.L:
            raise ValueError(f"layer index {ell} outside 1..{self.L}")
        return self.latent_dims[ell - 1]

    def cond_dim(self, ell: int) -> int:
        """Width of the concatenated conditioners z_{ell+1}..z_L."""
        return sum(self.latent_dims[ell:])


class BetaVector:
    """Positive per-layer rate multipliers, ordered layer L first."""

    __slots__ = ("values",)

    def __init__(self, values):
        vals = tuple(float(v) for v in values)
        if not vals:
            raise ValueError("beta vector cannot be empty")
        if any(not np.isfinite(v) or v <= 0.0 for v in vals):
            raise ValueError("all betas must be positive and finite")
        self.values = vals

    def __len__(self):
        return len(self.values)

    def __iter__(self):
        return iter(self.values)

    def __getitem__(self, i):
        return self.values[i]

    def __eq__(self, other):
        if isinstance(other, BetaVector):
            return self.values == other.values
        return NotImplemented

    def __repr__(self):
        return f"BetaVector{self.values}"

    def beta_for(self, ell: int) -> float:
        """Multiplier attached to layer ``ell``."""
        return self.values[len(self.values) - ell]


@dataclass(frozen=True)
class LayerTrace:
    """Per-layer record of one inference pass (arrays, batch-first)."""

    ell: int
    z: np.ndarray
    q_mean: np.ndarray
    q_std: np.ndarray
    p_mean: np.ndarray
    p_std: np.ndarray
    log_q: np.ndarray
    log_p: np.ndarray
    kl: np.ndarray

    def log_ratio(self) -> np.ndarray:
        return self.log_q - self.log_p


@dataclass(frozen=True)
class InferenceTrace:
    """Everything one minibatch pass produced, ordered layer L first.

    ``x_mean`` holds the likelihood location (Gaussian mean, or Bernoulli
    probabilities); ``x_std`` is None for the Bernoulli likelihood.
    """

    layers: tuple
    likelihood: str
    x_mean: np.ndarray
    x_std: Optional[np.ndarray]

    def layer(self, ell: int) -> LayerTrace:
        for lay in self.layers:
            if lay.ell == ell:
                return lay
        raise KeyError(f"no layer {ell} in trace")

    def mode(self, ell: int) -> np.ndarray:
        """Mean of the inferred Gaussian at one layer (probe features)."""
        return self.layer(ell).q_mean

    def log_q_total(self) -> np.ndarray:
        return sum(lay.log_q for lay in self.layers)

    def log_p_total(self) -> np.ndarray:
        return sum(lay.log_p for lay in self.layers)

    def total_log_ratio(self) -> np.ndarray:
        """Per-sample log q({z}|x) - log p({z}), all layers regrouped."""
        return self.log_q_total() - self.log_p_total()


@dataclass(frozen=True)
class LossParts:
    """Scalar components of one objective evaluation (nats)."""

    loss: float
    distortion: float
    layer_rates: tuple
    total_rate: float

    def finite(self) -> bool:
        vals = (self.loss, self.distortion, self.total_rate, *self.layer_rates)
        return bool(np.all(np.isfinite(vals)))


@dataclass(frozen=True)
class FrozenNoise:
    """Pre-drawn unit noise, one array per layer ordered z_L first."""

    eps: tuple


def frozen_noise(config: HvaeConfig, batch: int, seed: int) -> FrozenNoise:
    """Draw and freeze per-layer noise for repeatable loss evaluations."""
    ns = NoiseSource(seed)
    eps = tuple(
        ns.normal((batch, config.dim_z(ell))) for ell in range(config.L, 0, -1)
    )
    return FrozenNoise(eps)


def precision_merge(a: DiagGaussian, b: DiagGaussian) -> DiagGaussian:
    """Fuse two diagonal Gaussians by precision weighting."""
    pa = 1.0 / dc.square(a.std)
    pb = 1.0 / dc.square(b.std)
    var = 1.0 / (pa + pb)
    mean = (a.mean * pa + b.mean * pb) * var
    std = dc.exp(0.5 * dc.log(var))
    return DiagGaussian(mean, std)


class HvaeModel:
    """Networks of the generative and inference stacks.

    The model owns one flat :class:`ParameterSet` view in which every
    network's tensors appear under a ``<net>.`` prefix. Models are
    immutable; training produces updated copies via :meth:`with_params`.
    """

    __slots__ = ("config", "nets")

    def __init__(self, config: HvaeConfig, nets: dict):
        missing = set(_net_names(config)) - set(nets)
        if missing:
            raise ValueError(f"missing networks: {sorted(missing)}")
        self.config = config
        self.nets = dict(nets)

    @classmethod
    def init(cls, config: HvaeConfig, seed: int) -> "HvaeModel":
        """Fresh model; weights ~ N(0, 1/fan-in), sigma heads near 1."""
        ns = NoiseSource(seed)
        hidden = list(config.hidden)
        act = config.activation
        nets = {}

        def gauss_head_net(in_dim, d):
            net = Network.initialized(
                mlp_layers([in_dim, *hidden, 2 * d], act), ns.normal
            )
            return _bias_sigma_head(net, d)

        L = config.L
        if config.inference == "top_down":
            nets[f"q{L}"] = gauss_head_net(config.data_dim, config.dim_z(L))
            for ell in range(L - 1, 0, -1):
                nets[f"q{ell}"] = gauss_head_net(
                    config.cond_dim(ell) + config.data_dim, config.dim_z(ell)
                )
        else:
            feat = hidden[-1]
            nets["b1"] = Network.initialized(
                mlp_layers([config.data_dim, *hidden], act, out_activation=act),
                ns.normal,
            )
            for ell in range(2, L + 1):
                nets[f"b{ell}"] = Network.initialized(
                    mlp_layers([feat, *hidden], act, out_activation=act), ns.normal
                )
            for ell in range(L, 0, -1):
                nets[f"h{ell}"] = _bias_sigma_head(
                    Network.initialized(
                        mlp_layers([feat, 2 * config.dim_z(ell)]), ns.normal
                    ),
                    config.dim_z(ell),
                )
        for ell in range(L - 1, 0, -1):
            nets[f"p{ell}"] = gauss_head_net(config.cond_dim(ell), config.dim_z(ell))
        nets["px"] = Network.initialized(
            mlp_layers([config.dim_z(1), *hidden, config.data_dim], act), ns.normal
        )
        return cls(config, nets)

    def params(self) -> ParameterSet:
        """Flat view of all parameters under ``<net>.`` prefixes."""
        flat = {}
        for name, net in self.nets.items():
            for pname, value in net.params.items():
                flat[f"{name}.{pname}"] = value
        return ParameterSet(flat)

    def with_params(self, flat: ParameterSet) -> "HvaeModel":
        """Copy of the model with parameters replaced from a flat set."""
        nets = {}
        for name, net in self.nets.items():
            local = {}
            prefix = f"{name}."
            for pname in net.params.names():
                full = prefix + pname
                if full not in flat:
                    raise ValueError(f"flat parameter set is missing {full!r}")
                local[pname] = flat[full]
            nets[name] = net.replace_params(ParameterSet(local))
        return HvaeModel(self.config, nets)

    def param_count(self) -> int:
        return sum(net.param_count() for net in self.nets.values())


def _net_names(config: HvaeConfig):
    L = config.L
    names = []
    if config.inference == "top_down":
        names += [f"q{ell}" for ell in range(1, L + 1)]
    else:
        names += [f"b{ell}" for ell in range(1, L + 1)]
        names += [f"h{ell}" for ell in range(1, L + 1)]
    names += [f"p{ell}" for ell in range(1, L)]
    names.append("px")
    return names


def _bias_sigma_head(net: Network, d: int) -> Network:
    last = len(net.layers) - 1
    b = net.params[f"b{last}"].copy()
    b[d:] = SIGMA_HEAD_BIAS
    return net.replace_params(net.params.updated(f"b{last}", b))


def _gauss_head(net, inp, leaves, prefix, d) -> DiagGaussian:
    out = net.apply(inp, leaves, prefix)
    mu = dc.narrow(out, 0, d)
    raw = dc.narrow(out, d, d)
    return DiagGaussian(mu, dc.clip(dc.softplus(raw), SIGMA_MIN, SIGMA_MAX))


def _likelihood_dist(model, z1, leaves):
    out = model.nets["px"].apply(z1, leaves, "px.")
    if model.config.likelihood == "gaussian":
        std = np.full(dc.value_of(out).shape, model.config.sigma_x)
        return DiagGaussian(out, std)
    probs = dc.exp(-dc.softplus(-out))
    return BernoulliVec(probs)


def _conditioners(zs_down, x=None):
    """Concatenate [z_{l+1}, ..., z_L] and optionally the data vector."""
    parts = list(reversed(zs_down))
    if x is not None:
        parts.append(x)
    return parts[0] if len(parts) == 1 else dc.concat(parts)


def _draw_eps(noise, config: HvaeConfig, batch: int):
    if isinstance(noise, FrozenNoise):
        eps = list(noise.eps)
        if len(eps) != config.L:
            raise ValueError("frozen noise has the wrong number of layers")
        for k, ell in enumerate(range(config.L, 0, -1)):
            if eps[k].shape != (batch, config.dim_z(ell)):
                raise ValueError("frozen noise shape mismatch")
        return eps
    return [
        noise.normal((batch, config.dim_z(ell))) for ell in range(config.L, 0, -1)
    ]


def _inference_stack(model: HvaeModel, x, eps, leaves=None, mode="sample"):
    """Shared forward pass; returns per-layer records and the likelihood.

    With ``leaves`` the pass is recorded for gradients; otherwise it runs
    on plain arrays.
    """
    cfg = model.config
    L = cfg.L
    batch = dc.value_of(x).shape[0]

    feats = {}
    if cfg.inference == "lvae":
        h = x
        for ell in range(1, L + 1):
            h = model.nets[f"b{ell}"].apply(h, leaves, f"b{ell}.")
            feats[ell] = h

    records = []
    zs_down = []
    for ell in range(L, 0, -1):
        if ell == L:
            d = cfg.dim_z(L)
            p = DiagGaussian(np.zeros((batch, d)), np.ones((batch, d)))
        else:
            p = _gauss_head(
                model.nets[f"p{ell}"],
                _conditioners(zs_down),
                leaves,
                f"p{ell}.",
                cfg.dim_z(ell),
            )
        if cfg.inference == "top_down":
            q_in = x if ell == L else _conditioners(zs_down, x)
            q = _gauss_head(model.nets[f"q{ell}"], q_in, leaves, f"q{ell}.", cfg.dim_z(ell))
        else:
            bu = _gauss_head(
                model.nets[f"h{ell}"], feats[ell], leaves, f"h{ell}.", cfg.dim_z(ell)
            )
            q = bu if ell == L else precision_merge(bu, p)
        z = q.rsample_with(eps[L - ell]) if mode == "sample" else q.mean
        records.append(
            dict(ell=ell, q=q, p=p, z=z, log_q=q.log_prob(z), log_p=p.log_prob(z), kl=q.kl(p))
        )
        zs_down.append(z)

    x_dist = _likelihood_dist(model, zs_down[-1], leaves)
    return records, x_dist


def infer(model: HvaeModel, x: np.ndarray, noise, mode="sample") -> InferenceTrace:
    """Run the inference stack over a batch and record everything.

    ``noise`` is a :class:`NoiseSource` or :class:`FrozenNoise`; it is not
    consumed when ``mode="mode"``. The same seed gives the same trace.
    """
    x = dc.as_tensor(x)
    if x.ndim != 2 or x.shape[1] != model.config.data_dim:
        raise ValueError(f"x must be (batch, {model.config.data_dim})")
    if mode not in ("sample", "mode"):
        raise ValueError(f"unknown mode {mode!r}")
    eps = _draw_eps(noise, model.config, x.shape[0]) if mode == "sample" else None
    records, x_dist = _inference_stack(model, x, eps, leaves=None, mode=mode)
    layers = tuple(
        LayerTrace(
            ell=r["ell"],
            z=r["z"],
            q_mean=r["q"].mean,
            q_std=r["q"].std,
            p_mean=r["p"].mean,
            p_std=r["p"].std,
            log_q=r["log_q"],
            log_p=r["log_p"],
            kl=r["kl"],
        )
        for r in records
    )
    if model.config.likelihood == "gaussian":
        return InferenceTrace(layers, "gaussian", x_dist.mean, x_dist.std)
    return InferenceTrace(layers, "bernoulli", dc.value_of(x_dist.probs), None)


def layer_rates(trace: InferenceTrace) -> tuple:
    """Batch-mean closed-form KL per layer, ordered (R_L, ..., R_1), nats."""
    return tuple(float(np.mean(lay.kl)) for lay in trace.layers)


def distortion(model: HvaeModel, trace: InferenceTrace, x: np.ndarray) -> float:
    """Batch mean of -log p(x | sampled latents), in nats."""
    if trace.likelihood != model.config.likelihood:
        raise ValueError("trace likelihood does not match the model")
    x = dc.as_tensor(x)
    if trace.likelihood == "gaussian":
        dist = DiagGaussian(trace.x_mean, trace.x_std)
    else:
        dist = BernoulliVec(trace.x_mean)
    return float(np.mean(-dist.log_prob(x)))


def loss(model: HvaeModel, x: np.ndarray, betas, noise, _allow_nonpositive=False):
    """Information-trading objective: distortion + beta-weighted rates.

    Returns ``(scalar Var, LossParts)``. The Var is differentiable with
    respect to every model parameter; the parts carry the plain float
    components. With all betas equal to 1 the loss equals distortion plus
    total rate, the negative evidence lower bound.
    """
    cfg = model.config
    if isinstance(betas, BetaVector):
        bvals = betas.values
    else:
        bvals = tuple(float(b) for b in betas)
        if not _allow_nonpositive and any(b <= 0.0 for b in bvals):
            raise ValueError("all betas must be positive")
    if len(bvals) != cfg.L:
        raise ValueError(f"need {cfg.L} betas, got {len(bvals)}")

    x = dc.as_tensor(x)
    eps = _draw_eps(noise, cfg, x.shape[0])
    leaves = dc.lift(model.params())
    records, x_dist = _inference_stack(model, x, eps, leaves=leaves, mode="sample")

    rate_vars = [dc.mean_all(r["kl"]) for r in records]
    dist_var = dc.mean_all(-x_dist.log_prob(x))
    total = dist_var
    for beta, rate in zip(bvals, rate_vars):
        total = total + beta * rate

    parts = LossParts(
        loss=float(total.value),
        distortion=float(dist_var.value),
        layer_rates=tuple(float(r.value) for r in rate_vars),
        total_rate=float(sum(r.value for r in rate_vars)),
    )
    return total, parts


def generate(model: HvaeModel, n: int, noise: NoiseSource, mode="sample") -> np.ndarray:
    """Ancestral sampling: z_L from the prior, conditionals downward.

    Latents are always sampled; ``mode`` picks sample versus mean (or
    rounded probability) only for the final decode to data space.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if mode not in ("sample", "mode"):
        raise ValueError(f"unknown mode {mode!r}")
    cfg = model.config
    zs_down = [noise.normal((n, cfg.dim_z(cfg.L)))]
    for ell in range(cfg.L - 1, 0, -1):
        p = _gauss_head(
            model.nets[f"p{ell}"], _conditioners(zs_down), None, "", cfg.dim_z(ell)
        )
        zs_down.append(p.rsample_with(noise.normal((n, cfg.dim_z(ell)))))
    x_dist = _likelihood_dist(model, zs_down[-1], None)
    if cfg.likelihood == "gaussian":
        if mode == "sample":
            return x_dist.rsample_with(noise.normal((n, cfg.data_dim)))
        return x_dist.mean
    return x_dist.sample(noise) if mode == "sample" else x_dist.mode()


def reconstruct(model: HvaeModel, x: np.ndarray, noise, mode="sample") -> np.ndarray:
    """Round trip through all latents; ``mode`` applies at every step."""
    x = dc.as_tensor(x)
    if mode not in ("sample", "mode"):
        raise ValueError(f"unknown mode {mode!r}")
    eps = _draw_eps(noise, model.config, x.shape[0]) if mode == "sample" else None
    records, x_dist = _inference_stack(model, x, eps, leaves=None, mode=mode)
    if model.config.likelihood == "gaussian":
        if mode == "sample":
            return x_dist.rsample_with(noise.normal(x.shape))
        return x_dist.mean
    return x_dist.sample(noise) if mode == "sample" else x_dist.mode()
