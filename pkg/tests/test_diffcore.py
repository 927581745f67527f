import numpy as np
import pytest

from hitlab import diffcore as dc
from hitlab.diffcore import (
    LayerSpec,
    Network,
    NumericError,
    ParameterSet,
    Var,
    fd_check,
    gradient,
    lift,
    mlp_layers,
)
from hitlab.distributions import NoiseSource


def make_net(dims, activation="tanh", seed=0):
    return Network.initialized(mlp_layers(dims, activation), NoiseSource(seed).normal)


# -- apply ------------------------------------------------------------


def test_apply_identity_net_passes_input_through():
    net = Network(
        mlp_layers([3, 3]),
        ParameterSet({"w0": np.eye(3), "b0": np.zeros(3)}),
    )
    x = np.array([[0.5, -1.0, 2.0]])
    assert np.array_equal(net.apply(x), x)


def test_apply_zero_net_gives_zeros():
    net = Network(
        mlp_layers([4, 2]),
        ParameterSet({"w0": np.zeros((4, 2)), "b0": np.zeros(2)}),
    )
    x = NoiseSource(1).normal((7, 4))
    assert np.array_equal(net.apply(x), np.zeros((7, 2)))


def test_apply_matches_straightline_reevaluation():
    # independent forward pass with no graph machinery
    net = make_net([3, 4, 2], seed=11)
    x = NoiseSource(2).normal((5, 3))
    h = np.tanh(x @ net.params["w0"] + net.params["b0"])
    expected = h @ net.params["w1"] + net.params["b1"]
    assert np.allclose(net.apply(x), expected, rtol=0, atol=0)


def test_apply_dimension_mismatch_raises():
    net = make_net([3, 2])
    with pytest.raises(ValueError):
        net.apply(np.zeros((4, 5)))


def test_apply_nonfinite_output_raises():
    net = Network(
        mlp_layers([2, 2]),
        ParameterSet({"w0": np.eye(2), "b0": np.zeros(2)}),
    )
    with pytest.raises(NumericError):
        net.apply(np.array([[np.nan, 0.0]]))


def test_apply_is_deterministic():
    net = make_net([6, 8, 3], seed=4)
    x = NoiseSource(5).normal((10, 6))
    a, b = net.apply(x), net.apply(x)
    assert np.array_equal(a, b)


# -- gradient ---------------------------------------------------------


def test_gradient_of_sum_of_squares():
    params = ParameterSet({"p": np.array([1.0, 2.0])})
    leaves = lift(params)
    loss = leaves["p"].square().sum()
    grads = gradient(loss, params)
    assert np.allclose(grads["p"], [2.0, 4.0], rtol=0, atol=0)


def test_gradient_constant_loss_is_zero():
    params = ParameterSet({"p": np.array([1.0, -3.0]), "q": np.array([[2.0]])})
    leaves = lift(params)
    loss = leaves["p"].sum() * 0.0 + 5.0
    grads = gradient(loss, params)
    assert np.array_equal(grads["p"], np.zeros(2))
    # q never appears in the graph: documented zero gradient
    assert np.array_equal(grads["q"], np.zeros((1, 1)))


def test_gradient_rejects_non_scalar_loss():
    params = ParameterSet({"p": np.array([1.0, 2.0])})
    leaves = lift(params)
    with pytest.raises(ValueError):
        gradient(leaves["p"].square(), params)


def test_gradient_matches_manual_central_differences():
    # oracle: hand-rolled finite differences, independent of fd_check
    net = make_net([3, 5, 2], seed=9)
    x = NoiseSource(10).normal((6, 3))
    target = NoiseSource(12).normal((6, 2))

    def loss_value(params):
        h = np.tanh(x @ params["w0"] + params["b0"])
        out = h @ params["w1"] + params["b1"]
        r = out - target
        return float(np.mean(0.5 * np.log(2 * np.pi) + 0.5 * r * r))

    def loss_var(params):
        leaves = lift(params)
        h = (x @ leaves["w0"] + leaves["b0"]).tanh()
        out = h @ leaves["w1"] + leaves["b1"]
        r = out - target
        return (0.5 * np.log(2 * np.pi) + 0.5 * r.square()).mean()

    params = net.params
    grads = gradient(loss_var(params), params)
    h = 1e-5
    worst = 0.0
    for name, value in params.items():
        flat = value.ravel()
        for j in range(flat.size):
            up, dn = value.copy(), value.copy()
            up.ravel()[j] += h
            dn.ravel()[j] -= h
            fd = (loss_value(params.updated(name, up)) - loss_value(params.updated(name, dn))) / (2 * h)
            a = grads[name].ravel()[j]
            worst = max(worst, abs(a - fd) / (abs(a) + 1e-8))
    assert worst < 1e-4


def test_gradient_accumulates_repeated_leaf_names():
    params = ParameterSet({"p": np.array([2.0])})
    a = lift(params)["p"]
    b = lift(params)["p"]
    grads = gradient((a * b).sum(), params)
    assert np.allclose(grads["p"], [4.0], rtol=0, atol=1e-15)


# -- fd_check ---------------------------------------------------------


def test_fd_check_quadratic():
    params = ParameterSet({"p": NoiseSource(3).normal(5)})

    def loss_fn(ps):
        return lift(ps)["p"].square().sum()

    assert fd_check(loss_fn, params, h=1e-5) < 1e-9


def test_fd_check_linear_is_exact():
    c = NoiseSource(4).normal(6)
    params = ParameterSet({"p": NoiseSource(5).normal(6)})

    def loss_fn(ps):
        return (lift(ps)["p"] * c).sum()

    assert fd_check(loss_fn, params, h=1e-5) < 1e-10


def test_fd_check_rejects_bad_step():
    params = ParameterSet({"p": np.ones(2)})
    with pytest.raises(ValueError):
        fd_check(lambda ps: lift(ps)["p"].sum(), params, h=0.0)


# -- primitive gradients ----------------------------------------------

PRIMITIVES = {
    "tanh": (lambda v: v.tanh(), (-2.0, 2.0)),
    "relu": (lambda v: v.relu(), (-2.0, 2.0)),
    "softplus": (lambda v: v.softplus(), (-2.0, 2.0)),
    "exp": (lambda v: v.exp(), (-2.0, 2.0)),
    "log": (lambda v: v.log(), (0.05, 2.0)),  # positive domain
    "square": (lambda v: v.square(), (-2.0, 2.0)),
    "sum": (lambda v: v * 0.0 + v, (-2.0, 2.0)),
    "mean": (lambda v: v * 1.0, (-2.0, 2.0)),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradient_matches_fd(name):
    fn, (lo, hi) = PRIMITIVES[name]
    weigher = NoiseSource(77).normal(8)
    ns = NoiseSource(hash(name) & 0xFFFF)
    for trial in range(100):
        raw = lo + (hi - lo) * ns.uniform(8)
        if name == "relu":
            # finite differences are meaningless within h of the kink
            raw = np.where(np.abs(raw) < 1e-3, raw + 2e-3, raw)
        params = ParameterSet({"p": raw})

        def loss_fn(ps):
            out = fn(lift(ps)["p"])
            return out.mean() if name == "mean" else (out * weigher).sum()

        assert fd_check(loss_fn, params, h=1e-5) < 1e-4


def test_affine_gradient_matches_fd():
    ns = NoiseSource(31)
    for trial in range(100):
        params = ParameterSet({"w": ns.normal((3, 2)), "b": ns.normal(2)})
        x = ns.normal((4, 3))
        weigher = ns.normal((4, 2))

        def loss_fn(ps):
            leaves = lift(ps)
            return ((x @ leaves["w"] + leaves["b"]) * weigher).sum()

        assert fd_check(loss_fn, params, h=1e-5) < 1e-4


def test_relu_subgradient_at_zero_is_zero():
    params = ParameterSet({"p": np.array([0.0, -1.0, 1.0])})
    grads = gradient(lift(params)["p"].relu().sum(), params)
    assert np.array_equal(grads["p"], [0.0, 0.0, 1.0])


def test_clip_gradient_gates_outside_range():
    params = ParameterSet({"p": np.array([-2.0, 0.3, 5.0])})
    grads = gradient(lift(params)["p"].clip(0.0, 1.0).sum(), params)
    assert np.array_equal(grads["p"], [0.0, 1.0, 0.0])


def test_concat_and_narrow_roundtrip_gradients():
    params = ParameterSet({"a": np.array([1.0, 2.0]), "b": np.array([3.0])})

    def loss_fn(ps):
        leaves = lift(ps)
        joined = dc.concat([leaves["a"], leaves["b"]])
        return (dc.narrow(joined, 1, 2).square()).sum()

    assert fd_check(loss_fn, params, h=1e-5) < 1e-9


# -- ParameterSet and Network ------------------------------------------


def test_parameterset_iterates_lexicographically():
    ps = ParameterSet({"b": np.zeros(1), "a.z": np.ones(2), "a.a": np.ones(1)})
    assert ps.names() == ["a.a", "a.z", "b"]
    assert [n for n, _ in ps.items()] == ["a.a", "a.z", "b"]


def test_parameterset_arrays_are_frozen():
    ps = ParameterSet({"p": np.ones(3)})
    with pytest.raises(ValueError):
        ps["p"][0] = 2.0


def test_parameterset_updated_leaves_original_alone():
    ps = ParameterSet({"p": np.ones(2)})
    ps2 = ps.updated("p", np.zeros(2))
    assert np.array_equal(ps["p"], np.ones(2))
    assert np.array_equal(ps2["p"], np.zeros(2))


def test_network_param_count_formula():
    net = make_net([3, 7, 2])
    assert net.param_count() == 3 * 7 + 7 + 7 * 2 + 2


def test_network_rejects_non_chaining_layers():
    with pytest.raises(ValueError):
        Network(
            (LayerSpec(3, 4), LayerSpec(5, 2)),
            ParameterSet({"w0": np.zeros((3, 4)), "b0": np.zeros(4),
                          "w1": np.zeros((5, 2)), "b1": np.zeros(2)}),
        )


def test_network_rejects_wrong_param_shapes():
    with pytest.raises(ValueError):
        Network(
            mlp_layers([2, 2]),
            ParameterSet({"w0": np.zeros((2, 3)), "b0": np.zeros(1)}),
        )


def test_var_refuses_numpy_ufunc_capture():
    # ndarray <op> Var must route through Var's reflected operators
    v = Var(np.ones(3))
    out = np.ones(3) - v
    assert isinstance(out, Var)
    assert np.array_equal(out.value, np.zeros(3))
