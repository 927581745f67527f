import math

import numpy as np
import pytest
from scipy.integrate import quad

from hitlab.distributions import NoiseSource
from hitlab.metrics import (
    ProbeClassifier,
    RunMetrics,
    accuracy_bound_f,
    accuracy_bound_inverse,
    binary_entropy,
    fit_probe,
    inception_score,
    mi_estimate,
    predict_accuracy,
    psnr,
)

# frozen oracles
IS_HAND_FIXTURE = 1.4449348111684152  # predictives (.9,.1) and (.1,.9)
F_HALF_M10 = 0.5108256237659907  # f(0.5) for uniform labels, M=10
H_UNIFORM_10 = math.log(10)


class StubClassifier:
    def __init__(self, probs):
        self.probs = np.asarray(probs, dtype=np.float64)

    def predict_proba(self, x):
        return self.probs


# -- psnr ---------------------------------------------------------------


def test_psnr_zero_db_when_mse_equals_peak_squared():
    x = np.zeros((4, 4))
    x_hat = np.full((4, 4), 3.0)
    assert abs(psnr(x, x_hat, max_value=3.0)) < 1e-12


def test_psnr_twenty_db_fixture():
    x = np.zeros((1, 100))
    x_hat = np.full((1, 100), 0.1)  # MSE = 0.01
    assert abs(psnr(x, x_hat, max_value=1.0) - 20.0) < 1e-12


def test_psnr_perfect_reconstruction_is_infinite():
    x = NoiseSource(0).normal((5, 3))
    assert psnr(x, x.copy(), max_value=1.0) == math.inf


def test_psnr_validation():
    with pytest.raises(ValueError):
        psnr(np.zeros((2, 2)), np.zeros((2, 3)), 1.0)
    with pytest.raises(ValueError):
        psnr(np.zeros((0, 2)), np.zeros((0, 2)), 1.0)
    with pytest.raises(ValueError):
        psnr(np.zeros((2, 2)), np.zeros((2, 2)), 0.0)


# -- sample quality score -------------------------------------------------


def test_score_uniform_predictive_is_one():
    m = 7
    clf = StubClassifier(np.full((10, m), 1.0 / m))
    score, diversity, sharpness = inception_score(np.zeros((10, 2)), clf)
    assert abs(score - 1.0) < 1e-12
    assert abs(diversity - m) < 1e-9
    assert abs(sharpness - 1.0 / m) < 1e-12


def test_score_deterministic_onehot_uniform_classes():
    m = 10
    probs = np.eye(m)[np.arange(30) % m]
    score, diversity, sharpness = inception_score(np.zeros((30, 2)), StubClassifier(probs))
    assert abs(score - m) < 1e-9
    assert abs(diversity - m) < 1e-9
    assert abs(sharpness - 1.0) < 1e-12


def test_score_hand_fixture():
    probs = np.array([[0.9, 0.1], [0.1, 0.9]])
    score, diversity, sharpness = inception_score(np.zeros((2, 2)), StubClassifier(probs))
    assert abs(score - IS_HAND_FIXTURE) < 1e-12
    assert abs(score - diversity * sharpness) < 1e-9 * score


def test_score_product_identity_on_random_predictives():
    ns = NoiseSource(1)
    for _ in range(25):
        raw = ns.uniform((40, 5)) + 1e-3
        probs = raw / raw.sum(axis=1, keepdims=True)
        score, diversity, sharpness = inception_score(np.zeros((40, 1)), StubClassifier(probs))
        assert abs(score - diversity * sharpness) <= 1e-9 * abs(score)


def test_score_rejects_degenerate_predictives():
    with pytest.raises(ValueError):
        inception_score(np.zeros((3, 1)), StubClassifier(np.zeros((3, 4))))
    with pytest.raises(ValueError):
        inception_score(np.zeros((1, 1)), StubClassifier(np.full((1, 2), 0.5)))


# -- mutual information ------------------------------------------------------


def two_class_mi_by_quadrature(a):
    """Oracle: I(y;z) for z|y ~ N((2y-1)a, 1), y uniform on {0,1}."""

    def log_pdf(z, mu):
        return -0.5 * (z - mu) ** 2 - 0.5 * math.log(2 * math.pi)

    def neg_p_log_p(z):
        p = 0.5 * math.exp(log_pdf(z, -a)) + 0.5 * math.exp(log_pdf(z, a))
        return -p * math.log(p)

    hz, err = quad(neg_p_log_p, -a - 14, a + 14, limit=400, epsabs=1e-12)
    assert err < 1e-8
    return hz - 0.5 * math.log(2 * math.pi * math.e)


def test_mi_shuffled_labels_is_near_zero():
    n = 2000
    rng = NoiseSource(2)
    mus = 0.5 * rng.normal((n, 1))
    stds = np.ones((n, 1))
    labels = rng.integers(2, n)
    est, se = mi_estimate(mus, stds, labels, NoiseSource(3))
    assert abs(est) < 4 * se


def test_mi_one_hot_features_reach_log_m():
    m, per = 4, 300
    labels = np.repeat(np.arange(m), per)
    # one-hot plus tiny noise; classes stay far apart relative to the stds
    mus = np.eye(m)[labels] + 0.02 * NoiseSource(40).normal((m * per, m))
    stds = np.full_like(mus, 0.05)
    est, se = mi_estimate(mus, stds, labels, NoiseSource(4))
    assert abs(est - math.log(m)) < 4 * se + 1e-9


def test_mi_two_class_gaussians_match_quadrature():
    a, per = 1.2, 4000
    labels = np.array([0, 1] * per)
    mus = (2.0 * labels[:, None] - 1.0) * a
    stds = np.ones((2 * per, 1))
    est, se = mi_estimate(mus, stds, labels, NoiseSource(5))
    oracle = two_class_mi_by_quadrature(a)
    assert abs(est - oracle) < 4 * se


def test_mi_validation():
    mus, stds = np.zeros((4, 1)), np.ones((4, 1))
    with pytest.raises(ValueError):
        mi_estimate(mus, stds, np.zeros(4, dtype=int), NoiseSource(0))
    with pytest.raises(ValueError):
        mi_estimate(mus, stds, np.array([0, 0, 0, 1]), NoiseSource(0))


# -- accuracy bound -----------------------------------------------------------


def test_bound_f_at_perfect_accuracy_is_label_entropy():
    assert abs(accuracy_bound_f(1.0, H_UNIFORM_10, 10) - H_UNIFORM_10) < 1e-12


def test_bound_f_binary_chance_is_zero():
    assert abs(accuracy_bound_f(0.5, math.log(2), 2)) < 1e-15


def test_bound_f_frozen_value():
    assert abs(accuracy_bound_f(0.5, H_UNIFORM_10, 10) - F_HALF_M10) < 1e-6


def test_bound_f_validation():
    with pytest.raises(ValueError):
        accuracy_bound_f(1.2, 1.0, 4)
    with pytest.raises(ValueError):
        accuracy_bound_f(0.5, 1.0, 1)
    assert binary_entropy(0.0) == 0.0
    assert binary_entropy(1.0) == 0.0


def test_bound_inverse_round_trips():
    for m in (2, 10):
        h = math.log(m)
        for alpha in (0.35 + 0.65 / m, 0.7, 0.9, 0.99):
            if alpha <= 1.0 / m:
                continue
            back = accuracy_bound_inverse(accuracy_bound_f(alpha, h, m), h, m)
            assert abs(back - alpha) < 1e-9


def test_bound_inverse_clamps():
    h = math.log(10)
    assert accuracy_bound_inverse(h, h, 10) == 1.0
    assert accuracy_bound_inverse(h + 5.0, h, 10) == 1.0
    assert accuracy_bound_inverse(0.0, math.log(2), 2) == 0.5
    assert accuracy_bound_inverse(-3.0, h, 10) == 0.1


def test_bound_f_strictly_increasing_on_dense_grid():
    for m in (2, 10):
        h = math.log(m)
        grid = np.linspace(1.0 / m + 1e-3, 1.0, 10_000)
        vals = [accuracy_bound_f(a, h, m) for a in grid]
        assert np.all(np.diff(vals) > 0)


# -- probes --------------------------------------------------------------------


def test_logreg_separable_blobs_reach_perfect_accuracy():
    ns = NoiseSource(6)
    x0 = ns.normal((50, 2)) * 0.3 + np.array([5.0, 5.0])
    x1 = ns.normal((50, 2)) * 0.3 - np.array([5.0, 5.0])
    x = np.vstack([x0, x1])
    y = np.array([0] * 50 + [1] * 50)
    clf = fit_probe("logreg", x, y, seed=0)
    assert predict_accuracy(clf, x, y) == 1.0


def test_probe_on_random_features_sits_at_chance():
    ns = NoiseSource(7)
    m = 3
    x_train, y_train = ns.normal((600, 3)), ns.integers(m, 600)
    x_test, y_test = ns.normal((2000, 3)), ns.integers(m, 2000)
    se = math.sqrt((1 / m) * (1 - 1 / m) / 2000)
    for kind in ("logreg", "knn"):
        clf = fit_probe(kind, x_train, y_train, seed=0)
        acc = predict_accuracy(clf, x_test, y_test)
        assert abs(acc - 1.0 / m) < 4 * se


def test_knn_k1_is_perfect_on_its_own_training_set():
    ns = NoiseSource(8)
    x = ns.normal((40, 3))
    y = ns.integers(4, 40)
    clf = fit_probe("knn", x, y, seed=0, k=1)
    assert predict_accuracy(clf, x, y) == 1.0


def test_knn_vote_ties_break_toward_smallest_class():
    x = np.array([[-1.0, 0.0], [1.0, 0.0]])
    y = np.array([1, 0])
    clf = fit_probe("knn", x, y, seed=0, k=2)
    # both neighbors equidistant from the origin: tie between classes 0 and 1
    assert clf.predict(np.array([[0.0, 0.0]]))[0] == 0


def test_probe_rejects_single_class_and_bad_kind():
    x = np.zeros((5, 2))
    with pytest.raises(ValueError):
        fit_probe("logreg", x, np.zeros(5, dtype=int))
    with pytest.raises(ValueError):
        ProbeClassifier("svm")
    with pytest.raises(ValueError):
        ProbeClassifier("knn", k=0)
    with pytest.raises(ValueError):
        ProbeClassifier("knn").predict_proba(np.zeros((2, 2)))


def test_logreg_predict_proba_rows_are_distributions():
    ns = NoiseSource(9)
    x, y = ns.normal((60, 2)), ns.integers(3, 60)
    clf = fit_probe("logreg", x, y)
    p = clf.predict_proba(ns.normal((10, 2)))
    assert p.shape == (10, 3)
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(p >= 0)


# -- run metrics record -----------------------------------------------------------


def test_run_metrics_validates_rate_sum_and_score_identity():
    good = RunMetrics(
        distortion=1.0, psnr=20.0, layer_rates=(0.5, 0.25), total_rate=0.75,
        elbo=-1.75, inception=2.0, diversity=4.0, sharpness=0.5,
    )
    assert good.total_rate == 0.75
    with pytest.raises(ValueError):
        RunMetrics(
            distortion=1.0, psnr=20.0, layer_rates=(0.5, 0.25), total_rate=1.0,
            elbo=-2.0, inception=2.0, diversity=4.0, sharpness=0.5,
        )
    with pytest.raises(ValueError):
        RunMetrics(
            distortion=1.0, psnr=20.0, layer_rates=(0.5,), total_rate=0.5,
            elbo=-1.5, inception=2.0, diversity=4.0, sharpness=0.6,
        )
    with pytest.raises(ValueError):
        RunMetrics(
            distortion=1.0, psnr=20.0, layer_rates=(0.5,), total_rate=0.5,
            elbo=-1.5, inception=1.0, diversity=2.0, sharpness=0.5,
            probe_accuracies={("logreg", 2): 1.5},
        )
