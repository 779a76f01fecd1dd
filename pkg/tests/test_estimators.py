import math

import numpy as np
import pytest

from phack.constraints import BinningScheme
from phack.estimators import (
    NOT_ROUNDED,
    Origin,
    PValueSample,
    SingularCovarianceError,
    cluster_robust_covariance,
    cluster_subsample,
    deround,
    empirical_cdf,
    histogram_proportions,
    multinomial_covariance,
    t_to_p,
)


def normal_sf(x):
    return 0.5 * math.erfc(x / math.sqrt(2.0))


# --- sample validation -------------------------------------------------------------------


def test_sample_validation():
    s = PValueSample([0.1, 1.0])
    assert s.n == 2 and list(s.origin) == ["reported_p", "reported_p"]
    for bad in ([0.0], [1.5], [-0.1], [np.nan]):
        with pytest.raises(ValueError):
            PValueSample(bad)
    with pytest.raises(ValueError):
        PValueSample([0.1, 0.2], cluster_id=["a"])
    with pytest.raises(ValueError):
        PValueSample([0.1], rounding_digits=[-2])
    with pytest.raises(ValueError):
        PValueSample([0.1], origin=["guessed"])
    zero = PValueSample([0.0], rounding_digits=[2])
    assert zero.values[0] == 0.0


def test_sample_is_read_only():
    s = PValueSample([0.1, 0.2])
    with pytest.raises(ValueError):
        s.values[0] = 0.5


# --- t to p -------------------------------------------------------------------------------


def test_t_to_p_examples():
    assert t_to_p(0.0) == 1.0
    assert t_to_p(1.96) == pytest.approx(0.0500, abs=1e-4)
    assert t_to_p(2.0) == pytest.approx(0.0455, abs=1e-4)
    assert t_to_p(-2.0) == t_to_p(2.0)


def test_t_to_p_against_erfc():
    for t in (0.1, 0.7, 1.3, 2.5, 4.0, 8.0):
        assert t_to_p(t) == pytest.approx(2 * normal_sf(t), rel=1e-14)
    with pytest.raises(ValueError):
        t_to_p(np.inf)


# --- de-rounding --------------------------------------------------------------------------


def test_deround_bounds():
    n = 2000
    s = PValueSample(np.full(n, 0.03), rounding_digits=np.full(n, 2))
    out = deround(s, 1).values
    assert np.all((out > 0.025) & (out <= 0.035))
    assert abs(out.mean() - 0.03) < 3 * 0.01 / math.sqrt(12 * n)
    z = deround(PValueSample(np.zeros(n), rounding_digits=np.full(n, 2)), 2).values
    assert np.all((z > 0.0) & (z <= 0.005))


def test_deround_keeps_unrounded_and_clamps():
    s = PValueSample([0.0123456, 1.0, 0.5], rounding_digits=[NOT_ROUNDED, 1, 3])
    out = deround(s, 7)
    assert out.values[0] == 0.0123456
    assert 0.95 < out.values[1] <= 1.0
    assert 0.4995 < out.values[2] <= 0.5005
    assert np.all(out.rounding_digits == NOT_ROUNDED)


def test_deround_determinism_and_errors():
    s = PValueSample(np.full(10, 0.04), rounding_digits=np.full(10, 2))
    np.testing.assert_array_equal(deround(s, 5).values, deround(s, 5).values)
    assert not np.array_equal(deround(s, 5).values, deround(s, 6).values)
    with pytest.raises(ValueError):
        deround(PValueSample([0.1]), 1)


# --- cluster subsampling ------------------------------------------------------------------


def test_cluster_subsample_singletons_identity():
    s = PValueSample([0.1, 0.2, 0.3], cluster_id=["a", "b", "c"])
    assert sorted(cluster_subsample(s, 0).values) == [0.1, 0.2, 0.3]


def test_cluster_subsample_one_per_cluster():
    labels = ["a", "a", "b", "c", "c", "c", "c"]
    s = PValueSample(np.arange(1, 8) / 10, cluster_id=labels)
    out = cluster_subsample(s, 3)
    assert out.n == 3
    assert sorted(out.cluster_id) == ["a", "b", "c"]
    np.testing.assert_array_equal(out.values, cluster_subsample(s, 3).values)
    with pytest.raises(ValueError):
        cluster_subsample(PValueSample([0.1]), 0)


def test_cluster_subsample_is_uniform_within_cluster():
    s = PValueSample([0.1, 0.2, 0.3, 0.9], cluster_id=["a", "a", "a", "b"])
    picks = [cluster_subsample(s, seed).values[0] for seed in range(3000)]
    counts = np.array([picks.count(v) for v in (0.1, 0.2, 0.3)])
    # chi-square goodness of fit against 1/3 each, 2 degrees of freedom, 0.1% critical value 13.8
    assert np.sum((counts - 1000) ** 2 / 1000) < 13.8


# --- histogram ----------------------------------------------------------------------------


def test_histogram_right_closed_edges():
    prop = histogram_proportions(PValueSample([0.01, 0.02, 0.03, 0.04]), BinningScheme(2, 0.04))
    assert prop.counts.tolist() == [2, 2]
    assert prop.pi_hat.tolist() == [0.5, 0.5]
    assert histogram_proportions(PValueSample([0.05]), BinningScheme(3, 0.15)).counts.tolist() == [1, 0, 0]


def test_histogram_outside_interval():
    prop = histogram_proportions(PValueSample([0.01, 0.1, 0.2, 0.9]), BinningScheme(3, 0.15))
    assert prop.n_effective == 2 and prop.n_outside == 2 and prop.G_alpha_hat == 0.5
    assert prop.pi_hat.sum() == 1.0
    with pytest.raises(ValueError):
        histogram_proportions(PValueSample([0.5]), BinningScheme(3, 0.15))


def test_histogram_uniform_monte_carlo():
    rng = np.random.default_rng(11)
    prop = histogram_proportions(PValueSample(rng.random(100_000) + 1e-12), BinningScheme(10, 1.0))
    np.testing.assert_allclose(prop.pi_hat, 0.1, atol=0.005)


def test_null_mass_below_alpha():
    rng = np.random.default_rng(12)
    alpha, n = 0.15, 2000
    for _ in range(20):
        prop = histogram_proportions(PValueSample(1 - rng.random(n)), BinningScheme(15, alpha))
        assert prop.G_alpha_hat >= alpha - 3 * math.sqrt(alpha * (1 - alpha) / n)


# --- covariances --------------------------------------------------------------------------


def _prop(pi, n=1000):
    counts = np.round(np.asarray(pi) * n)
    vals = np.concatenate([np.full(int(c), (j + 0.5) / len(pi)) for j, c in enumerate(counts)])
    return histogram_proportions(PValueSample(vals), BinningScheme(len(pi), 1.0))


def test_multinomial_covariance_examples():
    np.testing.assert_allclose(multinomial_covariance(_prop([0.5, 0.5])), [[0.25]], atol=1e-15)
    np.testing.assert_allclose(
        multinomial_covariance(_prop([0.5, 0.3, 0.2])), [[0.25, -0.15], [-0.15, 0.21]], atol=1e-15
    )


def test_multinomial_covariance_matches_indicator_covariance():
    rng = np.random.default_rng(4)
    vals = rng.random(500) * 0.99 + 0.005
    b = BinningScheme(5, 1.0)
    prop = histogram_proportions(PValueSample(vals), b)
    z = np.zeros((500, 4))
    idx = np.minimum((vals * 5).astype(int), 4)
    z[idx < 4, idx[idx < 4]] = 1
    np.testing.assert_allclose(multinomial_covariance(prop), np.cov(z.T, bias=True), atol=1e-14)


def test_singular_covariance():
    prop = _prop([0.5, 0.0, 0.5])
    with pytest.raises(SingularCovarianceError, match="bins 2"):
        multinomial_covariance(prop)
    omega = multinomial_covariance(prop, ridge=True)
    assert np.all(np.linalg.eigvalsh(omega) > 0)


def test_cluster_robust_reductions():
    rng = np.random.default_rng(8)
    vals = rng.random(40) * 0.9 + 0.05
    b = BinningScheme(4, 1.0)
    single = PValueSample(vals, cluster_id=[str(i) for i in range(40)])
    base = multinomial_covariance(histogram_proportions(single, b))
    np.testing.assert_allclose(cluster_robust_covariance(single, b), base, atol=1e-14)
    # each cluster holds two copies of one observation: v_c doubles, n doubles, so omega doubles
    doubled = PValueSample(np.repeat(vals, 2), cluster_id=[str(i) for i in np.repeat(np.arange(40), 2)])
    np.testing.assert_allclose(cluster_robust_covariance(doubled, b), 2 * base, atol=1e-14)


def test_cluster_robust_hand_example():
    # bins (0,.5], (.5,1]; z = 1 for the first bin; pi_hat_core = 0.5
    s = PValueSample([0.1, 0.2, 0.7, 0.8], cluster_id=["a", "a", "b", "b"])
    # v_a = 2 * 0.5 = 1, v_b = -1 -> (1 + 1) / 4
    assert cluster_robust_covariance(s, BinningScheme(2, 1.0))[0, 0] == pytest.approx(0.5, abs=1e-15)
    with pytest.raises(ValueError):
        cluster_robust_covariance(PValueSample([0.1]), BinningScheme(2, 1.0))


def test_cluster_robust_larger_diagonal_when_dependent():
    rng = np.random.default_rng(9)
    base = rng.random(200) * 0.98 + 0.01
    s = PValueSample(np.repeat(base, 3), cluster_id=np.repeat(np.arange(200), 3).astype(str))
    b = BinningScheme(5, 1.0)
    cl = cluster_robust_covariance(s, b)
    mn = multinomial_covariance(histogram_proportions(s, b))
    assert np.all(np.diag(cl) > np.diag(mn))


# --- empirical CDF ------------------------------------------------------------------------


def test_ecdf_examples():
    F = empirical_cdf([0.5])
    assert F(0.4999) == 0.0 and F(0.5) == 1.0 and F(0.9) == 1.0
    G = empirical_cdf([0.2, 0.2, 0.6, 0.9])
    assert G(0.2) == 0.5 and G(0.59) == 0.5 and G(0.6) == 0.75
    assert G.left_limits().tolist() == [0.0, 0.5, 0.75]
    with pytest.raises(ValueError):
        empirical_cdf([])


def test_ecdf_restricted():
    F = empirical_cdf(PValueSample([0.01, 0.1, 0.5]), upper=0.15)
    assert F(0.15) == 1.0 and F(0.05) == 0.5


def test_ecdf_dkw():
    rng = np.random.default_rng(10)
    F = empirical_cdf(rng.random(10_000))
    grid = np.linspace(0, 1, 2001)
    x = F.x
    # sup over the jump points: compare both one-sided limits with the identity
    gap = max(np.max(np.abs(F(grid) - grid)), np.max(np.abs(F.left_limits() - x)))
    assert gap < 0.02
