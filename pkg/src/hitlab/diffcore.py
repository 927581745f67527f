"""Reverse-mode autodiff over dense float64 arrays.

This is the computation substrate for every trainable piece of the
package: batched affine layers plus a handful of pointwise and reduction
primitives, recorded into a fresh graph on each evaluation and replayed
backward. There is no persistent tape; leaves are created per evaluation
by :func:`lift` and gradients are collected by parameter name.

Shapes follow numpy conventions. The only broadcasting the backward pass
supports is a parameter vector against a batch dimension (``(d,)`` versus
``(B, d)``) and scalars; anything fancier is out of scope.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

Tensor = np.ndarray

ACTIVATIONS = ("tanh", "relu", "softplus", "identity")


class NumericError(RuntimeError):
    """A sanctioned operation produced NaN or Inf."""


def as_tensor(x) -> Tensor:
    """Coerce to a row-major float64 array (0-d stays 0-d)."""
    return np.asarray(x, dtype=np.float64, order="C")


def _unbroadcast(grad: Tensor, shape: tuple) -> Tensor:
    """Reduce an output gradient back to the shape of a broadcast input."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Var:
    """One node of the recorded computation.

    ``value`` is a float64 array (shape ``()`` for scalars), ``grad`` is
    filled by the backward sweep. Named nodes are parameter leaves created
    by :func:`lift`; everything else is an intermediate or a constant.
    """

    __slots__ = ("value", "grad", "name", "_parents", "_vjp")

    # keep numpy from consuming `ndarray <op> Var`; python then falls back
    # to the reflected operator on Var
    __array_ufunc__ = None

    def __init__(self, value, parents=(), vjp=None, name=None):
        self.value = as_tensor(value)
        self.grad = None
        self.name = name
        self._parents = parents
        self._vjp = vjp

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Var(shape={self.value.shape}{tag})"

    # -- arithmetic ---------------------------------------------------

    def __add__(self, other):
        a, b = self, _as_var(other)
        return Var(
            a.value + b.value,
            (a, b),
            lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        )

    __radd__ = __add__

    def __neg__(self):
        return Var(-self.value, (self,), lambda g: (-g,))

    def __sub__(self, other):
        return self + (-_as_var(other))

    def __rsub__(self, other):
        return _as_var(other) + (-self)

    def __mul__(self, other):
        a, b = self, _as_var(other)
        return Var(
            a.value * b.value,
            (a, b),
            lambda g: (
                _unbroadcast(g * b.value, a.shape),
                _unbroadcast(g * a.value, b.shape),
            ),
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        a, b = self, _as_var(other)
        return Var(
            a.value / b.value,
            (a, b),
            lambda g: (
                _unbroadcast(g / b.value, a.shape),
                _unbroadcast(-g * a.value / (b.value * b.value), b.shape),
            ),
        )

    def __rtruediv__(self, other):
        return _as_var(other) / self

    def __matmul__(self, other):
        a, b = self, _as_var(other)
        return Var(
            a.value @ b.value,
            (a, b),
            lambda g: (g @ b.value.T, a.value.T @ g),
        )

    def __rmatmul__(self, other):
        return _as_var(other) @ self

    # -- pointwise ----------------------------------------------------

    def tanh(self):
        t = np.tanh(self.value)
        return Var(t, (self,), lambda g: (g * (1.0 - t * t),))

    def relu(self):
        # subgradient at exactly 0 is 0
        mask = self.value > 0.0
        return Var(np.where(mask, self.value, 0.0), (self,), lambda g: (g * mask,))

    def softplus(self):
        v = self.value
        out = np.logaddexp(0.0, v)
        sig = np.exp(-np.logaddexp(0.0, -v))
        return Var(out, (self,), lambda g: (g * sig,))

    def exp(self):
        e = np.exp(self.value)
        return Var(e, (self,), lambda g: (g * e,))

    def log(self):
        v = self.value
        return Var(np.log(v), (self,), lambda g: (g / v,))

    def square(self):
        v = self.value
        return Var(v * v, (self,), lambda g: (2.0 * g * v,))

    def clip(self, lo, hi):
        # gradient passes only where the value was not clamped
        v = self.value
        inside = (v >= lo) & (v <= hi)
        return Var(np.clip(v, lo, hi), (self,), lambda g: (g * inside,))

    # -- reductions ---------------------------------------------------

    def sum(self, axis=None):
        v = self.value
        if axis is None:
            return Var(v.sum(), (self,), lambda g: (g * np.ones_like(v),))
        if axis != -1:
            raise ValueError("only full or last-axis sums are supported")
        out = v.sum(axis=-1)
        return Var(out, (self,), lambda g: (np.broadcast_to(np.expand_dims(g, -1), v.shape),))

    def mean(self):
        v = self.value
        n = float(v.size)
        return Var(v.mean(), (self,), lambda g: (g * np.ones_like(v) / n,))


def _as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def constant(x) -> Var:
    """Wrap an array as an unnamed graph leaf."""
    return Var(x)


def concat(parts, axis=-1):
    """Concatenate along the last axis; Var and ndarray inputs may mix."""
    if axis != -1:
        raise ValueError("only last-axis concatenation is supported")
    if not any(isinstance(p, Var) for p in parts):
        return np.concatenate(parts, axis=-1)
    vs = [_as_var(p) for p in parts]
    sizes = [v.value.shape[-1] for v in vs]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        return tuple(g[..., offsets[i] : offsets[i + 1]] for i in range(len(vs)))

    return Var(np.concatenate([v.value for v in vs], axis=-1), tuple(vs), vjp)


def narrow(v, start, size):
    """Slice ``size`` entries along the last axis starting at ``start``."""
    if not isinstance(v, Var):
        return v[..., start : start + size]

    def vjp(g):
        full = np.zeros_like(v.value)
        full[..., start : start + size] = g
        return (full,)

    return Var(v.value[..., start : start + size], (v,), vjp)


# value/Var shims so distribution formulas can be written once

def log(x):
    return x.log() if isinstance(x, Var) else np.log(x)


def exp(x):
    return x.exp() if isinstance(x, Var) else np.exp(x)


def tanh(x):
    return x.tanh() if isinstance(x, Var) else np.tanh(x)


def relu(x):
    return x.relu() if isinstance(x, Var) else np.where(x > 0.0, x, 0.0)


def softplus(x):
    return x.softplus() if isinstance(x, Var) else np.logaddexp(0.0, x)


def square(x):
    return x.square() if isinstance(x, Var) else x * x


def clip(x, lo, hi):
    return x.clip(lo, hi) if isinstance(x, Var) else np.clip(x, lo, hi)


def sum_last(x):
    return x.sum(axis=-1) if isinstance(x, Var) else np.sum(x, axis=-1)


def mean_all(x):
    return x.mean() if isinstance(x, Var) else np.mean(x)


def value_of(x) -> Tensor:
    return x.value if isinstance(x, Var) else x


_ACT_FNS = {"tanh": tanh, "relu": relu, "softplus": softplus, "identity": lambda x: x}


# -- parameters ------------------------------------------------------


class ParameterSet:
    """Named float64 tensors with lexicographic iteration order.

    Arrays are frozen on entry; updates go through :meth:`updated` or by
    building a new set. The sorted order is what makes optimizer state
    and gradient collection reproducible.
    """

    def __init__(self, params=None):
        self._params = {}
        if params is not None:
            items = params.items() if hasattr(params, "items") else params
            for name, value in items:
                self._params[str(name)] = self._freeze(value)

    @staticmethod
    def _freeze(value) -> Tensor:
        arr = np.array(value, dtype=np.float64, order="C")
        arr.flags.writeable = False
        return arr

    def names(self):
        return sorted(self._params)

    def items(self) -> Iterator:
        for name in self.names():
            yield name, self._params[name]

    def __getitem__(self, name) -> Tensor:
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __len__(self):
        return len(self._params)

    def __iter__(self):
        return iter(self.names())

    def __eq__(self, other):
        if not isinstance(other, ParameterSet):
            return NotImplemented
        return self.names() == other.names() and all(
            np.array_equal(self[n], other[n]) for n in self.names()
        )

    def __repr__(self):
        return f"ParameterSet({len(self)} tensors, {self.count()} values)"

    def count(self) -> int:
        return sum(v.size for v in self._params.values())

    def updated(self, name, value) -> "ParameterSet":
        """Copy of this set with one tensor replaced."""
        out = ParameterSet()
        out._params = dict(self._params)
        out._params[str(name)] = self._freeze(value)
        return out

    def map(self, fn: Callable[[str, Tensor], Tensor]) -> "ParameterSet":
        return ParameterSet((n, fn(n, v)) for n, v in self.items())


def lift(params: ParameterSet) -> dict:
    """Create named graph leaves for every parameter.

    Call once per recorded evaluation; :func:`gradient` matches leaves
    back to parameters by name.
    """
    return {name: Var(value, name=name) for name, value in params.items()}


def _topo(root: Var):
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            stack.append((p, False))
    return order


def backward(loss: Var):
    """Run the reverse sweep, filling ``grad`` on every reachable node."""
    order = _topo(loss)
    loss.grad = np.ones((), dtype=np.float64)
    for node in reversed(order):
        if node._vjp is None or node.grad is None:
            continue
        for parent, g in zip(node._parents, node._vjp(node.grad)):
            parent.grad = g if parent.grad is None else parent.grad + g
    return order


def gradient(loss: Var, params: ParameterSet) -> ParameterSet:
    """Exact reverse-mode gradients of a recorded scalar loss.

    Parameters that do not appear in the graph get a zero gradient.
    """
    if loss.value.shape != ():
        raise ValueError(f"loss must be a scalar, got shape {loss.value.shape}")
    order = backward(loss)
    collected = {}
    for node in order:
        if node.name is not None and node.grad is not None:
            if node.name in collected:
                collected[node.name] = collected[node.name] + node.grad
            else:
                collected[node.name] = node.grad
    out = {}
    for name, value in params.items():
        g = collected.get(name)
        out[name] = np.zeros_like(value) if g is None else np.reshape(g, value.shape)
    return ParameterSet(out)


# -- dense networks ---------------------------------------------------


@dataclass(frozen=True)
class LayerSpec:
    in_dim: int
    out_dim: int
    activation: str = "identity"

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1:
            raise ValueError("layer dims must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


def mlp_layers(dims, hidden_activation="tanh", out_activation="identity"):
    """Layer specs for a dense stack ``dims[0] -> ... -> dims[-1]``."""
    if len(dims) < 2:
        raise ValueError("need at least input and output dims")
    specs = []
    for i in range(len(dims) - 1):
        act = out_activation if i == len(dims) - 2 else hidden_activation
        specs.append(LayerSpec(dims[i], dims[i + 1], act))
    return tuple(specs)


def init_mlp_params(layers, normal_fn) -> ParameterSet:
    """Weights ~ N(0, 1/in_dim), biases 0; ``normal_fn(shape)`` supplies noise."""
    params = {}
    for i, spec in enumerate(layers):
        scale = 1.0 / np.sqrt(spec.in_dim)
        params[f"w{i}"] = scale * normal_fn((spec.in_dim, spec.out_dim))
        params[f"b{i}"] = np.zeros(spec.out_dim)
    return ParameterSet(params)


class Network:
    """A dense feed-forward stack that owns its parameters.

    Parameter names are ``w0, b0, w1, b1, ...``. Forward evaluation takes
    plain arrays (no recording) or, given lifted leaves and a name prefix,
    Vars that participate in gradient computation.
    """

    def __init__(self, layers, params: ParameterSet):
        layers = tuple(layers)
        if not layers:
            raise ValueError("a network needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise ValueError(
                    f"layer dims do not chain: {prev.out_dim} -> {nxt.in_dim}"
                )
        expected = sum(s.in_dim * s.out_dim + s.out_dim for s in layers)
        if params.count() != expected:
            raise ValueError(
                f"parameter count {params.count()} != expected {expected}"
            )
        for i, spec in enumerate(layers):
            if params[f"w{i}"].shape != (spec.in_dim, spec.out_dim):
                raise ValueError(f"bad shape for w{i}")
            if params[f"b{i}"].shape != (spec.out_dim,):
                raise ValueError(f"bad shape for b{i}")
        self.layers = layers
        self.params = params

    @classmethod
    def initialized(cls, layers, normal_fn) -> "Network":
        layers = tuple(layers)
        return cls(layers, init_mlp_params(layers, normal_fn))

    @property
    def in_dim(self):
        return self.layers[0].in_dim

    @property
    def out_dim(self):
        return self.layers[-1].out_dim

    def param_count(self):
        return self.params.count()

    def replace_params(self, params: ParameterSet) -> "Network":
        return Network(self.layers, params)

    def apply(self, x, leaves=None, prefix=""):
        """Batched forward evaluation.

        With ``leaves`` (a :func:`lift` result) parameters are read from
        the lifted Vars under ``prefix`` and the computation is recorded.
        """
        if value_of(x).shape[-1] != self.in_dim:
            raise ValueError(
                f"input last dim {value_of(x).shape[-1]} != net input {self.in_dim}"
            )
        h = x
        for i, spec in enumerate(self.layers):
            if leaves is None:
                w, b = self.params[f"w{i}"], self.params[f"b{i}"]
            else:
                w, b = leaves[f"{prefix}w{i}"], leaves[f"{prefix}b{i}"]
            h = _ACT_FNS[spec.activation](h @ w + b)
        if not np.all(np.isfinite(value_of(h))):
            raise NumericError("network forward pass produced non-finite values")
        return h


def fd_check(loss_fn: Callable[[ParameterSet], Var], params: ParameterSet, h=1e-5):
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn`` must rebuild its graph from the given parameters on every
    call (and keep any sampling noise frozen). The error per coordinate is
    ``|analytic - fd| / (|analytic| + 1e-8)``.
    """
    if h <= 0:
        raise ValueError("step size h must be positive")
    analytic = gradient(loss_fn(params), params)
    worst = 0.0
    for name, value in params.items():
        flat = value.ravel()
        for j in range(flat.size):
            fd = _central_difference(loss_fn, params, name, value, j, h)
            a = analytic[name].ravel()[j]
            rel = abs(a - fd) / (abs(a) + 1e-8)
            worst = max(worst, rel)
    return worst


def _central_difference(loss_fn, params, name, value, j, h):
    outs = []
    for sign in (1.0, -1.0):
        bumped = value.copy()
        bumped.ravel()[j] += sign * h
        f = float(loss_fn(params.updated(name, bumped)).value)
        if not np.isfinite(f):
            raise NumericError(f"non-finite loss while probing {name}[{j}]")
        outs.append(f)
    return (outs[0] - outs[1]) / (2.0 * h)
