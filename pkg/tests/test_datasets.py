import math

import numpy as np
import pytest
from scipy.integrate import quad

from hitlab.datasets import (
    Dataset,
    bar_label_of_image,
    from_csv,
    gen_binary_bars,
    gen_gaussian,
    gen_labeled_mixture,
    mixture_log_density,
    to_csv,
)

H_GAUSS_1D_UNIT = 1.4189385332046727  # 0.5 log(2 pi e)


def gaussian_entropy_by_quadrature(var):
    """Oracle: integrate -p log p for a 1-d centered Gaussian."""
    s = math.sqrt(var)

    def integrand(x):
        lp = -0.5 * (x / s) ** 2 - math.log(s) - 0.5 * math.log(2 * math.pi)
        return -math.exp(lp) * lp

    val, err = quad(integrand, -12 * s, 12 * s, limit=400, epsabs=1e-12)
    assert err < 1e-9
    return val


# -- gaussian -----------------------------------------------------------


def test_gaussian_unit_entropy_matches_quadrature():
    ds = gen_gaussian(1, 1.0, 100, seed=0)
    assert abs(ds.entropy_nats - H_GAUSS_1D_UNIT) < 1e-12
    assert abs(ds.entropy_nats - gaussian_entropy_by_quadrature(1.0)) < 1e-9


def test_gaussian_2d_entropy_is_sum_of_coordinates():
    ds = gen_gaussian(2, (1.0, 1.0), 10, seed=1)
    assert abs(ds.entropy_nats - 2 * H_GAUSS_1D_UNIT) < 1e-12
    mixed = gen_gaussian(2, (0.5, 3.0), 10, seed=2)
    expected = gaussian_entropy_by_quadrature(0.5) + gaussian_entropy_by_quadrature(3.0)
    assert abs(mixed.entropy_nats - expected) < 1e-9


def test_gaussian_empty_dataset_is_valid():
    ds = gen_gaussian(3, 1.0, 0, seed=3)
    assert len(ds) == 0
    assert ds.dim == 3


def test_gaussian_sample_moments_roughly_match():
    ds = gen_gaussian(2, (1.0, 4.0), 200_000, seed=4)
    assert np.allclose(ds.x.var(axis=0), [1.0, 4.0], rtol=0.05)


def test_gaussian_rejects_bad_variance():
    with pytest.raises(ValueError):
        gen_gaussian(2, (1.0, 0.0), 10, seed=0)


# -- labeled mixture -------------------------------------------------------


def test_mixture_zero_separation_collapses_to_single_gaussian():
    ds = gen_labeled_mixture(3, 2, separation=0.0, n=100, seed=5, entropy_mc=200_000)
    closed = 2 * H_GAUSS_1D_UNIT
    assert abs(ds.entropy_nats - closed) < 3 * ds.entropy_se_nats


def test_mixture_huge_separation_adds_label_entropy():
    m = 2
    ds = gen_labeled_mixture(m, 2, separation=60.0, n=100, seed=6, entropy_mc=200_000)
    expected = math.log(m) + 2 * H_GAUSS_1D_UNIT
    assert abs(ds.entropy_nats - expected) < 3 * ds.entropy_se_nats


def test_mixture_labels_are_uniform_within_3_se():
    m, n = 4, 40_000
    ds = gen_labeled_mixture(m, 3, separation=2.0, n=n, seed=7, entropy_mc=10_000)
    freqs = np.bincount(ds.y, minlength=m) / n
    se = math.sqrt((1 / m) * (1 - 1 / m) / n)
    assert np.all(np.abs(freqs - 1 / m) < 3 * se)
    assert ds.label_entropy_nats == math.log(m)


def test_mixture_log_density_is_a_proper_density():
    # oracle: quadrature over the 1-d marginal structure is impractical,
    # so integrate the 2-d density on a grid instead
    means = np.array([[2.0, 0.0], [-2.0, 0.0]])
    lin = np.linspace(-10, 10, 401)
    xx, yy = np.meshgrid(lin, lin)
    pts = np.column_stack([xx.ravel(), yy.ravel()])
    dens = np.exp(mixture_log_density(pts, means))
    mass = dens.sum() * (lin[1] - lin[0]) ** 2
    assert abs(mass - 1.0) < 1e-6


def test_mixture_determinism_and_validation():
    a = gen_labeled_mixture(2, 2, 1.0, 50, seed=8, entropy_mc=1000)
    b = gen_labeled_mixture(2, 2, 1.0, 50, seed=8, entropy_mc=1000)
    assert np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y)
    assert a.entropy_nats == b.entropy_nats
    with pytest.raises(ValueError):
        gen_labeled_mixture(1, 2, 1.0, 10, seed=0)
    with pytest.raises(ValueError):
        gen_labeled_mixture(2, 2, -1.0, 10, seed=0)
    with pytest.raises(ValueError):
        gen_labeled_mixture(2, 1, 1.0, 10, seed=0)


# -- binary bars -------------------------------------------------------------


def test_bars_entropy_and_class_count():
    ds = gen_binary_bars(4, 100, seed=9)
    assert ds.n_classes == 8
    assert abs(ds.entropy_nats - math.log(8)) < 1e-15
    assert abs(ds.entropy_nats - 2.0794415416798357) < 1e-12


def test_bars_have_exactly_grid_size_active_pixels():
    g = 5
    ds = gen_binary_bars(g, 200, seed=10)
    assert set(np.unique(ds.x)) <= {0.0, 1.0}
    assert np.all(ds.x.sum(axis=1) == g)


def test_bars_label_roundtrip():
    g = 4
    ds = gen_binary_bars(g, 300, seed=11)
    for img, lab in zip(ds.x, ds.y):
        assert bar_label_of_image(img, g) == lab


def test_bars_determinism():
    a = gen_binary_bars(3, 64, seed=12)
    b = gen_binary_bars(3, 64, seed=12)
    assert np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y)


# -- dataset plumbing ---------------------------------------------------------


def test_dataset_validation():
    with pytest.raises(ValueError):
        Dataset(np.zeros((3, 2)), np.zeros(2, dtype=int), 1, 0.0)
    with pytest.raises(ValueError):
        Dataset(np.zeros((3, 2)), np.array([0, 0, 5]), 2, 0.0)


def test_dataset_split_is_disjoint_and_complete():
    ds = gen_labeled_mixture(2, 2, 1.0, 100, seed=13, entropy_mc=1000)
    head, tail = ds.split(30)
    assert len(head) == 30 and len(tail) == 70
    assert np.array_equal(np.vstack([head.x, tail.x]), ds.x)
    assert head.entropy_nats == ds.entropy_nats


def test_csv_roundtrip_preserves_samples_exactly(tmp_path):
    ds = gen_labeled_mixture(3, 2, 1.5, 40, seed=14, entropy_mc=1000)
    path = tmp_path / "data.csv"
    to_csv(ds, path)
    back = from_csv(path)
    assert np.array_equal(back.x, ds.x)
    assert np.array_equal(back.y, ds.y)
    assert back.n_classes == ds.n_classes


def test_csv_rejects_missing_label_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        from_csv(path)
