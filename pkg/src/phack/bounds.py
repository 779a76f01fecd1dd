"""Upper bounds on t-test p-curves, their derivatives and histogram bins.

Every p-curve without p-hacking is a mixture over ``h`` of the point-mass
curves, so any functional that is linear in the p-curve is bounded by its
maximum over point masses. This module evaluates those maxima: pointwise for
the density and its derivatives, and per bin for proportions and their k-th
differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
from scipy import optimize, special

from ._psi import psi_coefficients, psi_h_polynomial
from .nullmodel import TestFamily, critical_value

__all__ = [
    "PsiDerivative",
    "BinBoundTable",
    "bound_density",
    "h_star",
    "psi_derivative",
    "bound_derivative",
    "sharp_bin_bound",
    "bin_bound_table",
    "rescale_bounds",
    "psi_coefficients",
]

GRID_STEP = 1e-3
GRID_MARGIN = 10.0
REFINE_TOL = 1e-8
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
TWO_SIDED_THRESHOLD = 2.0 * special.ndtr(-1.0)  # 2 (1 - Phi(1))


class GridBoundaryError(RuntimeError):
    """The maximiser sits on the edge of the search grid."""


@dataclass(frozen=True)
class PsiDerivative:
    """Coefficient polynomials A^k_j (ascending powers of the critical value)."""

    k: int
    coefficients: tuple

    @classmethod
    def of_order(cls, k: int) -> "PsiDerivative":
        return cls(k, psi_coefficients(k))


def _log_phi(c):
    return -0.5 * c * c - 0.5 * math.log(2.0 * math.pi)


def psi_derivative(family: TestFamily, p, h, k: int):
    """k-th derivative in p of exp(cv_s(p) * h)."""
    family = TestFamily.parse(family)
    if k < 1:
        raise ValueError("psi_derivative needs k >= 1")
    c = critical_value(family, p)
    h = np.asarray(h, dtype=float)
    coef = psi_h_polynomial(k, c)
    poly = sum(coef[r] * h**r for r in range(k + 1))
    with np.errstate(divide="ignore"):
        logmag = c * h - k * (math.log(family.s) + _log_phi(c))
    out = poly * np.exp(logmag)
    return out[()] if np.ndim(out) == 0 else out


def _golden_max(fn, lo, hi, tol=REFINE_TOL):
    a, b = lo, hi
    x1 = b - _GOLDEN * (b - a)
    x2 = a + _GOLDEN * (b - a)
    f1, f2 = fn(x1), fn(x2)
    while b - a > tol:
        if f1 < f2:
            a, x1, f1 = x1, x2, f2
            x2 = a + _GOLDEN * (b - a)
            f2 = fn(x2)
        else:
            b, x2, f2 = x2, x1, f1
            x1 = b - _GOLDEN * (b - a)
            f1 = fn(x1)
    x = 0.5 * (a + b)
    return fn(x), x


def _maximize_on_grid(objective, upper, limit_at_inf=None):
    """Grid search on [0, upper] with golden-section refinement.

    ``objective`` maps an array of h to values. ``limit_at_inf`` is the value
    of the objective as h -> inf, used when the supremum is not attained.
    Returns ``(value, argmax)`` with ``argmax = inf`` for the limit case.
    """
    grid = np.arange(0.0, upper + GRID_STEP, GRID_STEP)
    vals = objective(grid)
    i = int(np.argmax(vals))
    if i == len(grid) - 1:
        if limit_at_inf is not None and limit_at_inf >= vals[i]:
            return float(limit_at_inf), math.inf
        raise GridBoundaryError(f"maximiser at the search boundary h={grid[-1]:.3f}; widen the grid")
    lo = grid[max(i - 1, 0)]
    hi = grid[i + 1]
    val, arg = _golden_max(lambda x: float(objective(np.array([x]))[0]), lo, hi)
    if vals[i] > val:
        val, arg = float(vals[i]), float(grid[i])
    if limit_at_inf is not None and limit_at_inf > val:
        return float(limit_at_inf), math.inf
    return val, arg


def _bound_objective(family, c, k):
    """h -> |k-th derivative of the point-mass p-curve at h| (h >= 0)."""
    coef = psi_h_polynomial(k, c)
    log_norm = -k * (math.log(family.s) + _log_phi(c))

    def poly(h):
        return sum(coef[r] * h**r for r in range(k + 1))

    if family is TestFamily.ONE_SIDED:

        def obj(h):
            return np.abs(poly(h)) * np.exp(c * h - 0.5 * h * h + log_norm)

    else:

        def obj(h):
            plus = poly(h) * np.exp(c * h - 0.5 * h * h + log_norm)
            minus = poly(-h) * np.exp(-c * h - 0.5 * h * h + log_norm)
            return 0.5 * np.abs(plus + minus)

    return obj


def bound_derivative_argmax(family: TestFamily, p: float, k: int):
    """``(bound, maximiser)`` for the k-th derivative bound at ``p``."""
    family = TestFamily.parse(family)
    if k < 0:
        raise ValueError("k must be nonnegative")
    c = float(critical_value(family, p))
    return _maximize_on_grid(_bound_objective(family, c, k), max(c, 0.0) + GRID_MARGIN)


def bound_derivative(family: TestFamily, p: float, k: int) -> float:
    """Upper bound on (-1)^k g_s^{(k)}(p) over all effect distributions."""
    return bound_derivative_argmax(family, p, k)[0]


def _phi_root_scaled(c, h):
    # ((c - h) e^{ch} - (c + h) e^{-ch}) / (h e^{ch}); equals 2c^2 - 2 at h = 0
    if h == 0.0:
        return 2.0 * c * c - 2.0
    return -2.0 - (c + h) * math.expm1(-2.0 * c * h) / h


def h_star(p: float) -> float:
    """Positive maximiser of the two-sided point-mass density at ``p``.

    Only defined for ``p < 2 (1 - Phi(1))``; above that threshold the
    maximiser is ``h = 0``.
    """
    if not 0.0 < p < TWO_SIDED_THRESHOLD:
        raise ValueError(
            f"h_star needs p in (0, {TWO_SIDED_THRESHOLD:.6f}); for larger p the maximiser is h = 0"
        )
    c = float(critical_value(TestFamily.TWO_SIDED, p))
    return optimize.brentq(lambda h: _phi_root_scaled(c, h), 0.0, c, xtol=1e-15, rtol=4 * np.finfo(float).eps)


def bound_density(family: TestFamily, p):
    """Upper bound on the p-curve itself (k = 0)."""
    family = TestFamily.parse(family)
    p_arr = np.asarray(p, dtype=float)
    c = critical_value(family, p_arr)
    if family is TestFamily.ONE_SIDED:
        out = np.where(p_arr <= 0.5, np.exp(0.5 * c * c), 1.0)
    else:
        flat = np.atleast_1d(p_arr)
        vals = np.ones(flat.shape)
        for i, pi in enumerate(flat):
            if pi < TWO_SIDED_THRESHOLD:
                hs = h_star(float(pi))
                ci = float(critical_value(family, pi))
                vals[i] = 0.5 * (math.exp(hs * ci - 0.5 * hs * hs) + math.exp(-hs * ci - 0.5 * hs * hs))
        out = vals.reshape(p_arr.shape)
    return out[()] if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# Bin bounds


@dataclass(frozen=True)
class BinBoundTable:
    """Sharp upper bounds on (-1)^k Delta^k_j for j = 1..J-k."""

    family: TestFamily
    edges: tuple
    k: int
    values: np.ndarray
    rescale: float = 1.0

    @property
    def J(self) -> int:
        return len(self.edges) - 1

    def to_dict(self) -> dict:
        return {
            "family": self.family.value,
            "edges": list(self.edges),
            "k": self.k,
            "values": [float(v) for v in self.values],
            "rescale": self.rescale,
        }


def _edge_cv(family, edges):
    edges = np.asarray(edges, dtype=float)
    cv = np.full(edges.shape, np.inf)
    inside = edges > 0
    cv[inside & (edges < 1)] = critical_value(family, edges[inside & (edges < 1)])
    cv[edges >= 1] = -np.inf if family is TestFamily.ONE_SIDED else 0.0
    return cv


def _lambda_matrix(family, cv, h):
    """Point-mass bin probabilities, shape (J, len(h)), for h >= 0."""
    lo = cv[1:, None]  # cv(x_j)
    hi = cv[:-1, None]  # cv(x_{j-1})
    lam = special.ndtr(hi - h) - special.ndtr(lo - h)
    if family is TestFamily.TWO_SIDED:
        lam = lam + special.ndtr(hi + h) - special.ndtr(lo + h)
    return lam


def _diff_weights(k):
    # (-1)^k Delta^k_j = sum_m (-1)^m C(k, m) pi_{j+m}
    return np.array([(-1) ** m * math.comb(k, m) for m in range(k + 1)], dtype=float)


def _bin_objective(family, cv, j0, k):
    """h -> sharp-bound objective for bins j0..j0+k (0-based)."""
    w = _diff_weights(k)
    sub = cv[j0 : j0 + k + 2]

    def obj(h):
        lam = _lambda_matrix(family, sub, np.asarray(h, dtype=float))
        return w @ lam

    # as h -> inf only a bin starting at p = 0 keeps mass (probability 1)
    limit = float(w[0]) if j0 == 0 else 0.0
    return obj, limit


def sharp_bin_bound(family: TestFamily, edges, j: int, k: int) -> float:
    """Sharp bound on (-1)^k Delta^k_j over point-mass effects (``j`` is 1-based).

    ``edges`` are the bin edges x_0 = 0 < ... < x_J on the p scale (a
    :class:`~phack.constraints.BinningScheme` is accepted too).
    """
    family = TestFamily.parse(family)
    edges = np.asarray(getattr(edges, "edges", edges), dtype=float)
    J = len(edges) - 1
    if not 1 <= j <= J - k or k < 0:
        raise ValueError(f"need 1 <= j <= J - k, got j={j}, k={k}, J={J}")
    cv = _edge_cv(family, edges)
    if k == 0 and family is TestFamily.ONE_SIDED:
        a, b = cv[j - 1], cv[j]
        if math.isinf(a):
            return 1.0
        if math.isinf(b) or a + b < 0.0:
            # the unconstrained maximiser (a + b) / 2 is negative; on h >= 0 it is h = 0
            return float(special.ndtr(a) - special.ndtr(b))
        return float(2.0 * special.ndtr(0.5 * (a - b)) - 1.0)
    obj, limit = _bin_objective(family, cv, j - 1, k)
    finite = cv[j - 1 : j + k + 1]
    finite = finite[np.isfinite(finite)]
    upper = max(float(np.max(finite)) if finite.size else 0.0, 0.0) + GRID_MARGIN
    return _maximize_on_grid(obj, upper, limit)[0]


@lru_cache(maxsize=256)
def _cached_table(family, edges, k):
    values = np.array([sharp_bin_bound(family, edges, j, k) for j in range(1, len(edges) - k)])
    values.setflags(write=False)
    return values


def bin_bound_table(family: TestFamily, binning, k: int) -> BinBoundTable:
    """Sharp bounds for every admissible bin index at difference order ``k``."""
    family = TestFamily.parse(family)
    edges = tuple(float(x) for x in getattr(binning, "edges", binning))
    return BinBoundTable(family, edges, k, _cached_table(family, edges, k))


def rescale_bounds(table: BinBoundTable, G_alpha_hat: float) -> BinBoundTable:
    """Bounds for proportions renormalised to (0, alpha]: divide by G(alpha)."""
    if not G_alpha_hat > 0:
        raise ValueError("G(alpha) estimate is zero: no observations in the analysis interval")
    if G_alpha_hat > 1:
        raise ValueError("G(alpha) estimate cannot exceed 1")
    if G_alpha_hat == 1.0:
        return table
    return replace(table, values=table.values / G_alpha_hat, rescale=table.rescale / G_alpha_hat)
