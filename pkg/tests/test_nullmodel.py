import math

import mpmath as mp
import numpy as np
import pytest
from scipy.special import ndtr

from conftest import FAMILIES, corpus_params
from phack.effects import Discrete, HalfNormal, Normal, PointMass
from phack.nullmodel import (
    PCurveSpec,
    TestFamily,
    critical_value,
    figure1_curves,
    nonsimilar_pcurve_density,
    noncentral_chisq_pdf,
    pcurve_cdf,
    pcurve_density,
    pcurve_derivative,
    power,
    sufficient_condition_gap,
)

mp.mp.dps = 40
ONE, TWO = TestFamily.ONE_SIDED, TestFamily.TWO_SIDED


def mp_cv(family, p):
    p = mp.mpf(p)
    if family is ONE:
        return mp.sqrt(2) * mp.erfinv(1 - 2 * p)
    return mp.sqrt(2) * mp.erfinv(1 - p)


def mp_point_density(family, h, p):
    """Point-mass p-curve in high precision, straight from the likelihood ratio."""
    c, h = mp_cv(family, p), mp.mpf(h)
    if family is ONE:
        return mp.exp(h * c - h * h / 2)
    return (mp.exp(h * c - h * h / 2) + mp.exp(-h * c - h * h / 2)) / 2


# --- critical values and power ------------------------------------------------


@pytest.mark.parametrize("family", FAMILIES)
@pytest.mark.parametrize("p", [1e-12, 1e-5, 0.01, 0.05, 0.3, 0.5, 0.77, 0.999])
def test_critical_value_matches_high_precision_quantile(family, p):
    assert critical_value(family, p) == pytest.approx(float(mp_cv(family, p)), rel=1e-13, abs=1e-14)


def test_critical_value_examples():
    assert critical_value(ONE, 0.5) == 0.0
    assert critical_value(ONE, 0.05) == pytest.approx(1.6448536, abs=1e-6)
    assert critical_value(TWO, 0.05) == pytest.approx(1.9599640, abs=1e-6)


@pytest.mark.parametrize("family", FAMILIES)
def test_critical_value_strictly_decreasing(family):
    p = np.linspace(1e-6, 1 - 1e-6, 2001)
    assert np.all(np.diff(critical_value(family, p)) < 0)
    if family is ONE:
        assert np.all((critical_value(family, p) >= 0) == (p <= 0.5))
    else:
        assert np.all(critical_value(family, p) > 0)


@pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5, np.nan])
def test_critical_value_domain(p):
    with pytest.raises(ValueError):
        critical_value(ONE, p)


def test_power_examples():
    assert power(ONE, 0.05, 0.0) == pytest.approx(0.05, abs=1e-15)
    assert power(ONE, 0.05, critical_value(ONE, 0.05)) == pytest.approx(0.5, abs=1e-15)
    assert power(TWO, 0.05, 0.0) == pytest.approx(0.05, abs=1e-15)


def test_two_sided_power_monte_carlo():
    z = np.random.default_rng(1).standard_normal(10**6) + 2.8
    freq = np.mean(np.abs(z) > 1.959963984540054)
    se = math.sqrt(freq * (1 - freq) / z.size)
    assert abs(power(TWO, 0.05, 2.8) - freq) < 3 * se


@pytest.mark.parametrize("family", FAMILIES)
@pytest.mark.parametrize("h", [0.0, 0.3, 1.0, 2.5])
def test_power_nondecreasing_in_level(family, h):
    p = np.linspace(1e-4, 1 - 1e-4, 500)
    assert np.all(np.diff(power(family, p, h)) >= 0)


def test_one_sided_power_rejects_negative_effect():
    with pytest.raises(ValueError):
        power(ONE, 0.05, -1.0)


# --- densities ------------------------------------------------------------------


def test_density_examples():
    assert pcurve_density(PCurveSpec(ONE, PointMass(0.0)), 0.3) == pytest.approx(1.0, abs=1e-15)
    assert pcurve_density(PCurveSpec(ONE, PointMass(1.0)), 0.05) == pytest.approx(
        math.exp(1.6448536269514722 - 0.5), rel=1e-12
    )
    # (exp(1.96 - 0.5) + exp(-1.96 - 0.5)) / 2 evaluated exactly is 2.1956
    assert pcurve_density(PCurveSpec(TWO, PointMass(1.0)), 0.05) == pytest.approx(2.19563, abs=5e-5)


@pytest.mark.parametrize("family", FAMILIES)
@pytest.mark.parametrize("h", [0.0, 0.7, 2.0, 5.0])
@pytest.mark.parametrize("p", [1e-8, 0.003, 0.05, 0.4, 0.9])
def test_point_mass_density_matches_mpmath(family, h, p):
    assert pcurve_density(PCurveSpec(family, PointMass(h)), p) == pytest.approx(
        float(mp_point_density(family, h, p)), rel=1e-11
    )


@pytest.mark.parametrize("family", FAMILIES)
@pytest.mark.parametrize("p", [1e-4, 0.02, 0.2, 0.7])
def test_half_normal_density_matches_quadrature(family, p):
    sigma = 1.3

    def integrand(h):
        w = 2 * mp.npdf(h, 0, sigma)
        return w * mp_point_density(family, h, p)

    expected = mp.quad(integrand, [0, 5, 15, mp.inf])
    assert pcurve_density(PCurveSpec(family, HalfNormal(sigma)), p) == pytest.approx(float(expected), rel=1e-10)


def test_two_sided_normal_effects_match_quadrature():
    p = 0.03
    expected = mp.quad(lambda h: mp.npdf(h, 0.5, 1.5) * mp_point_density(TWO, h, p), [-mp.inf, 0, mp.inf])
    assert pcurve_density(PCurveSpec(TWO, Normal(0.5, 1.5)), p) == pytest.approx(float(expected), rel=1e-10)


GRADED = (-700, -200, -50, -15, -5, -1) + tuple(-(10.0**-k) for k in range(1, 13))


def log_scale_integral(fn, lo, hi, pieces=GRADED):
    """Integral of fn over (e^lo, e^hi] by Gauss-Legendre in log p, vectorised per piece.

    The mesh is graded towards p = 1, where one-sided p-curves have a
    logarithmic singularity in their derivative.
    """
    hi = min(hi, -1e-13)  # the neglected tail holds O(1e-13) mass
    cuts = [lo] + [c for c in pieces if lo < c < hi] + [hi]
    x, w = np.polynomial.legendre.leggauss(200)
    total = 0.0
    for a, b in zip(cuts[:-1], cuts[1:]):
        u = 0.5 * (b - a) * x + 0.5 * (a + b)
        total += 0.5 * (b - a) * np.sum(w * fn(np.exp(u)) * np.exp(u))
    return total


@pytest.mark.parametrize("family,effects", corpus_params())
def test_density_normalised(family, effects):
    spec = PCurveSpec(family, effects)
    total = log_scale_integral(lambda p: pcurve_density(spec, p), -700, 0)
    assert total == pytest.approx(1.0, abs=1e-8)


def test_interval_renormalisation():
    spec = PCurveSpec(TWO, HalfNormal(1.0), interval=0.15)
    full = PCurveSpec(TWO, HalfNormal(1.0))
    total = log_scale_integral(lambda p: pcurve_density(spec, p), -700, math.log(0.15))
    assert total == pytest.approx(1.0, abs=1e-8)
    assert pcurve_cdf(spec, 0.15) == pytest.approx(1.0, abs=1e-14)
    assert pcurve_density(spec, 0.05) == pytest.approx(pcurve_density(full, 0.05) / pcurve_cdf(full, 0.15), rel=1e-13)
    with pytest.raises(ValueError):
        pcurve_density(spec, 0.2)


def test_one_sided_rejects_negative_support():
    with pytest.raises(ValueError):
        PCurveSpec(ONE, Normal(0.0, 1.0))


# --- CDF ------------------------------------------------------------------------


def test_cdf_examples():
    assert pcurve_cdf(PCurveSpec(ONE, PointMass(0.0)), 0.25) == pytest.approx(0.25, abs=1e-15)
    assert pcurve_cdf(PCurveSpec(TWO, PointMass(0.0)), 0.1) == pytest.approx(0.1, abs=1e-15)


def test_cdf_half_normal_against_sampling_pipeline():
    rng = np.random.default_rng(7)
    n = 10**6
    t = np.abs(rng.standard_normal(n)) + rng.standard_normal(n)
    p = ndtr(-t)
    freq = np.mean(p <= 0.05)
    se = math.sqrt(freq * (1 - freq) / n)
    assert abs(pcurve_cdf(PCurveSpec(ONE, HalfNormal(1.0)), 0.05) - freq) < 3 * se


@pytest.mark.parametrize("family,effects", corpus_params())
def test_cdf_consistent_with_density(family, effects):
    spec = PCurveSpec(family, effects)
    p = np.array([0.003, 0.04, 0.2, 0.6])
    h = 1e-5 * p
    fd = (pcurve_cdf(spec, p + h) - pcurve_cdf(spec, p - h)) / (2 * h)
    np.testing.assert_allclose(fd, pcurve_density(spec, p), rtol=1e-5)


@pytest.mark.parametrize("family,effects", corpus_params())
def test_cdf_dominates_uniform(family, effects):
    p = np.linspace(1e-4, 1 - 1e-4, 300)
    G = pcurve_cdf(PCurveSpec(family, effects), p)
    assert np.all(G >= p - 1e-12)
    assert np.all(np.diff(G) >= -1e-15)


# --- derivatives ----------------------------------------------------------------


def test_derivative_examples():
    assert pcurve_derivative(PCurveSpec(ONE, PointMass(0.0)), 0.3, 1) == 0.0
    spec = PCurveSpec(ONE, PointMass(1.0))
    fd = (pcurve_density(spec, 0.2 + 1e-5) - pcurve_density(spec, 0.2 - 1e-5)) / 2e-5
    assert pcurve_derivative(spec, 0.2, 1) == pytest.approx(fd, rel=1e-4)
    assert pcurve_derivative(PCurveSpec(TWO, HalfNormal(1.0)), 0.1, 2) > 0


@pytest.mark.parametrize("family", FAMILIES)
@pytest.mark.parametrize("h", [0.5, 1.5, 3.0])
@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_point_mass_derivatives_match_mpmath_differentiation(family, h, k):
    for p in (0.01, 0.12, 0.4):
        expected = mp.diff(lambda q: mp_point_density(family, h, q), mp.mpf(p), k)
        got = pcurve_derivative(PCurveSpec(family, PointMass(h)), p, k)
        assert got == pytest.approx(float(expected), rel=1e-9)


def test_mixture_derivative_is_weighted_sum():
    d = Discrete([0.0, 1.0, 2.5], [0.5, 0.3, 0.2])
    for k in range(5):
        direct = pcurve_derivative(PCurveSpec(TWO, d), 0.07, k)
        parts = sum(w * pcurve_derivative(PCurveSpec(TWO, PointMass(a)), 0.07, k) for a, w in zip(d.atoms, d.weights))
        assert direct == pytest.approx(parts, rel=1e-12)


def test_derivative_extreme_values_stay_finite():
    spec = PCurveSpec(ONE, PointMass(30.0))
    v = pcurve_derivative(spec, 1e-200, 4)
    assert np.isfinite(v) or v == np.inf
    assert pcurve_derivative(spec, 1e-3, 2) > 0


# --- sufficient condition for monotone p-curves and the non-similar example -------------------


def test_sufficient_condition_examples():
    assert sufficient_condition_gap("normal_shift", 1.5, 0.0) == pytest.approx(0.0, abs=1e-16)
    phi = lambda x: math.exp(-x * x / 2) / math.sqrt(2 * math.pi)
    expected = 2 * phi(1.5) * phi(-0.5)
    assert expected == pytest.approx(0.09120, abs=1e-5)
    assert sufficient_condition_gap("normal_shift", 1.5, 2.0) == pytest.approx(expected, rel=1e-13)
    assert sufficient_condition_gap("normal_shift", 1.5, -1.0) < 0


def test_sufficient_condition_normal_shift_closed_form():
    x, h = np.meshgrid(np.linspace(-4, 6, 50), np.linspace(0, 5, 50))
    phi = lambda z: np.exp(-z * z / 2) / np.sqrt(2 * np.pi)
    np.testing.assert_allclose(sufficient_condition_gap("normal_shift", x, h), h * phi(x) * phi(x - h), atol=1e-16)


@pytest.mark.parametrize(
    "case,xs,hs,d",
    [
        ("normal_shift", (-5, 8), (0, 6), None),
        ("folded_normal", (0, 8), (-6, 6), None),
        ("noncentral_chisq", (1e-3, 40), (0, 25), 1.0),
        ("noncentral_chisq", (1e-3, 40), (0, 25), 2.0),
        ("noncentral_chisq", (1e-3, 40), (0, 25), 5.0),
    ],
)
def test_sufficient_condition_holds_on_grid(case, xs, hs, d):
    x, h = np.meshgrid(np.linspace(*xs, 200), np.linspace(*hs, 200))
    assert np.min(sufficient_condition_gap(case, x, h, d)) >= -1e-12


def test_noncentral_chisq_density_matches_scipy():
    from scipy import stats

    x = np.linspace(0.1, 30, 40)
    for d, h in ((1, 0.5), (3, 4.0), (5, 12.0)):
        np.testing.assert_allclose(noncentral_chisq_pdf(x, d, h), stats.ncx2.pdf(x, d, h), rtol=1e-10)


def test_nonsimilar_density_closed_form():
    p = np.array([0.001, 0.05, 0.3, 0.8])
    c = critical_value(ONE, p)
    for mu in (0.0, -2.5, 1.0):
        expected = np.exp((c + mu) ** 2 / 4 - mu**2 / 2) / math.sqrt(2)
        np.testing.assert_allclose(nonsimilar_pcurve_density(Normal(mu, 1.0), p), expected, rtol=1e-12)


def test_figure1_shapes():
    p = np.linspace(1e-4, 0.1, 1000)
    curves = figure1_curves(p)
    assert np.all(np.diff(curves[0.0]) <= 0)
    assert np.any(np.diff(curves[-2.5]) > 0)
