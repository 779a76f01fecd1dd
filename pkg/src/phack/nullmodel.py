"""Power functions and p-curves for one- and two-sided t-tests.

A test of family ``s`` rejects at level ``p`` when its statistic exceeds
``cv_s(p)``: ``cv_1(p) = Phi^{-1}(1 - p)`` and ``cv_2(p) = Phi^{-1}(1 - p/2)``.
With true effects ``h ~ Pi`` the p-value CDF is ``G_s(p) = E_Pi[beta_s(p, h)]``
and the p-curve is

    g_1(p) = E_Pi[exp(h c - h^2/2)],                         c = cv_1(p)
    g_2(p) = E_Pi[(exp(h c - h^2/2) + exp(-h c - h^2/2)) / 2], c = cv_2(p)

Derivatives in ``p`` use the polynomial recursion in :mod:`phack._psi` and are
evaluated in log space.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import special

from ._psi import psi_h_polynomial
from .effects import EffectDistribution, Normal

__all__ = [
    "TestFamily",
    "PCurveSpec",
    "critical_value",
    "power",
    "pcurve_density",
    "pcurve_cdf",
    "pcurve_derivative",
    "nonsimilar_pcurve_density",
    "sufficient_condition_gap",
    "noncentral_chisq_pdf",
]

_LOG_2PI = math.log(2.0 * math.pi)


class TestFamily(enum.Enum):
    """One- or two-sided t-test with (asymptotically) normal statistic."""

    __test__ = False

    ONE_SIDED = "one_sided_t"
    TWO_SIDED = "two_sided_t"

    @property
    def s(self) -> int:
        return 1 if self is TestFamily.ONE_SIDED else 2

    @classmethod
    def parse(cls, value) -> "TestFamily":
        if isinstance(value, cls):
            return value
        aliases = {"one_sided": cls.ONE_SIDED, "1": cls.ONE_SIDED, "two_sided": cls.TWO_SIDED, "2": cls.TWO_SIDED}
        key = str(value).lower()
        if key in aliases:
            return aliases[key]
        return cls(key)


def _check_open_unit(p, name="p"):
    arr = np.asarray(p, dtype=float)
    if not np.all((arr > 0.0) & (arr < 1.0)):
        raise ValueError(f"{name} must lie in (0, 1)")
    return arr


def critical_value(family: TestFamily, p):
    """Critical value of a level-``p`` test; strictly decreasing in ``p``."""
    family = TestFamily.parse(family)
    p = _check_open_unit(p)
    # Phi^{-1}(1 - q) == -Phi^{-1}(q), and the latter keeps precision for small q
    if family is TestFamily.ONE_SIDED:
        return -special.ndtri(p)
    return -special.ndtri(p / 2.0)


def power(family: TestFamily, p, h):
    """Rejection rate beta(p, h) of a level-``p`` test when the effect is ``h``."""
    family = TestFamily.parse(family)
    h = np.asarray(h, dtype=float)
    if family is TestFamily.ONE_SIDED and np.any(h < 0):
        raise ValueError("one-sided family requires h >= 0")
    c = critical_value(family, p)
    if family is TestFamily.ONE_SIDED:
        return special.ndtr(h - c)
    return special.ndtr(h - c) + special.ndtr(-h - c)


@dataclass(frozen=True)
class PCurveSpec:
    """A test family, an effect distribution and an optional interval (0, alpha]."""

    family: TestFamily
    effects: EffectDistribution
    interval: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "family", TestFamily.parse(self.family))
        if self.family is TestFamily.ONE_SIDED and not self.effects.nonnegative:
            raise ValueError(
                "one-sided family needs effects supported on [0, inf); "
                "use nonsimilar_pcurve_density for effects with negative support"
            )
        if self.interval is not None and not 0.0 < self.interval < 1.0:
            raise ValueError(f"interval endpoint alpha must lie in (0, 1), got {self.interval}")

    def density(self, p):
        return pcurve_density(self, p)

    def cdf(self, p):
        return pcurve_cdf(self, p)

    def derivative(self, p, k: int):
        return pcurve_derivative(self, p, k)


def _log_phi(c):
    return -0.5 * c * c - 0.5 * _LOG_2PI


def _signed_log_term(effects, c, k, s):
    """sign, log|.| of (s phi(c))^{-k} E_Pi[P_k(h; c) exp(c h - h^2/2)]."""
    coef = psi_h_polynomial(k, c)
    log_scale, scaled = effects.tilted_moments(c, k)
    val = np.sum(coef * scaled, axis=0)
    with np.errstate(divide="ignore"):
        logabs = log_scale + np.log(np.abs(val)) - k * (math.log(s) + _log_phi(c))
    return np.sign(val), logabs


def _signed_log_add(sa, la, sb, lb):
    top = np.maximum(la, lb)
    top = np.where(np.isfinite(top), top, 0.0)
    total = sa * np.exp(la - top) + sb * np.exp(lb - top)
    with np.errstate(divide="ignore"):
        return np.sign(total), top + np.log(np.abs(total))


def _raw_signed_log_derivative(family, effects, p, k):
    c = critical_value(family, p)
    if family is TestFamily.ONE_SIDED:
        return _signed_log_term(effects, c, k, 1)
    sa, la = _signed_log_term(effects, c, k, 2)
    sb, lb = _signed_log_term(effects.reflected(), c, k, 2)
    sign, logabs = _signed_log_add(sa, la, sb, lb)
    return sign, logabs - math.log(2.0)


def _raw_cdf(family, effects, p):
    c = critical_value(family, p)
    if family is TestFamily.ONE_SIDED:
        return effects.survival(c)
    return effects.survival(c) + effects.reflected().survival(c)


def _normaliser(spec: PCurveSpec) -> float:
    if spec.interval is None:
        return 1.0
    return float(_raw_cdf(spec.family, spec.effects, spec.interval))


def _check_in_interval(spec, p):
    p = _check_open_unit(p)
    if spec.interval is not None and np.any(p > spec.interval):
        raise ValueError(f"p must lie in (0, {spec.interval}]")
    return p


def pcurve_derivative(spec: PCurveSpec, p, k: int):
    """k-th derivative of the p-curve (k = 0 gives the density)."""
    if k < 0:
        raise ValueError("derivative order must be nonnegative")
    p = _check_in_interval(spec, p)
    sign, logabs = _raw_signed_log_derivative(spec.family, spec.effects, p, k)
    logabs = logabs - math.log(_normaliser(spec))
    with np.errstate(over="ignore"):
        out = sign * np.exp(logabs)
    return out[()] if np.ndim(out) == 0 else out


def pcurve_density(spec: PCurveSpec, p):
    """The p-curve g_s(p), renormalised to the spec's interval if one is set."""
    return pcurve_derivative(spec, p, 0)


def pcurve_cdf(spec: PCurveSpec, p):
    """G_s(p), renormalised to the spec's interval if one is set."""
    p = _check_in_interval(spec, p)
    out = np.clip(_raw_cdf(spec.family, spec.effects, p) / _normaliser(spec), 0.0, 1.0)
    return out[()] if np.ndim(out) == 0 else out


def nonsimilar_pcurve_density(effects: EffectDistribution, p):
    """p-curve of a one-sided z-test of H0: h <= 0 when effects may be negative.

    The test is not similar on the boundary of the null, so the curve need not
    be monotone; ``Normal(-2.5, 1)`` effects give an increasing stretch on (0, 0.1].
    """
    p = _check_open_unit(p)
    sign, logabs = _raw_signed_log_derivative(TestFamily.ONE_SIDED, effects, p, 0)
    out = sign * np.exp(logabs)
    return out[()] if np.ndim(out) == 0 else out


def _chisq_logpdf(x, d):
    return (0.5 * d - 1.0) * np.log(x) - 0.5 * x - 0.5 * d * math.log(2.0) - special.gammaln(0.5 * d)


def _noncentral_chisq_series(x, d, h):
    """Return (f_h(x), f_h'(x)) by summing the Poisson mixture of central densities."""
    x = np.asarray(x, dtype=float)
    h = np.asarray(h, dtype=float)
    x, h = np.broadcast_arrays(x, h)
    lam = 0.5 * h
    dens = np.zeros(x.shape)
    deriv = np.zeros(x.shape)
    mode = int(np.ceil(np.max(lam))) if lam.size else 0
    j = 0
    while True:
        with np.errstate(divide="ignore", invalid="ignore"):
            log_pois = np.where(lam > 0, -lam + j * np.log(np.where(lam > 0, lam, 1.0)) - special.gammaln(j + 1), 0.0 if j == 0 else -np.inf)
        dj = d + 2 * j
        term = np.exp(log_pois + _chisq_logpdf(x, dj))
        dterm = term * ((dj - 2.0) / x - 1.0) / 2.0
        dens = dens + term
        deriv = deriv + dterm
        if j > mode and np.all(term <= 1e-16 * dens):
            break
        j += 1
        if j > 100000:
            raise ArithmeticError("noncentral chi-square series did not converge")
    return dens, deriv


def noncentral_chisq_pdf(x, d: float, h):
    """Density of the noncentral chi-square with ``d`` df and noncentrality ``h``."""
    return _noncentral_chisq_series(x, d, h)[0]


def sufficient_condition_gap(case: str, x, h, d: Optional[float] = None):
    """f_h'(x) f(x) - f'(x) f_h(x) for the three standard test families.

    ``case`` is ``"normal_shift"`` (one-sided z-test), ``"folded_normal"``
    (two-sided z-test, ``x >= 0``) or ``"noncentral_chisq"`` (Wald test with
    ``d`` degrees of freedom, ``x > 0``, ``h >= 0``).
    """
    x = np.asarray(x, dtype=float)
    h = np.asarray(h, dtype=float)
    if case == "normal_shift":
        f = np.exp(_log_phi(x))
        fp = -x * f
        fh = np.exp(_log_phi(x - h))
        fhp = -(x - h) * fh
    elif case == "folded_normal":
        if np.any(x < 0):
            raise ValueError("folded normal critical values are nonnegative")
        f = 2.0 * np.exp(_log_phi(x))
        fp = -x * f
        a, b = np.exp(_log_phi(x - h)), np.exp(_log_phi(x + h))
        fh = a + b
        fhp = -(x - h) * a - (x + h) * b
    elif case == "noncentral_chisq":
        if d is None or not d > 0:
            raise ValueError("noncentral_chisq needs degrees of freedom d > 0")
        if np.any(x <= 0) or np.any(h < 0):
            raise ValueError("noncentral_chisq needs x > 0 and h >= 0")
        f = np.exp(_chisq_logpdf(x, d))
        fp = f * ((d - 2.0) / x - 1.0) / 2.0
        fh, fhp = _noncentral_chisq_series(x, d, h)
    else:
        raise ValueError(f"unknown case {case!r}")
    out = fhp * f - fp * fh
    return out[()] if np.ndim(out) == 0 else out


def figure1_curves(p, mus=(0.0, -2.5)) -> dict:
    """Non-similar one-sided p-curves with N(mu, 1) effects, one per ``mu``."""
    return {mu: nonsimilar_pcurve_density(Normal(mu, 1.0), p) for mu in mus}
