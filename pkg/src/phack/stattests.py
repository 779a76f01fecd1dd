"""Tests of the null of no p-hacking.

Every test returns a :class:`TestResult` holding the statistic, its p-value,
the reference distribution and enough diagnostics to reproduce the decision.

* ``binomial``: excess of p-values in (0.045, 0.05] relative to [0.04, 0.045].
* ``fisher``: mass piling up just below a significance threshold.
* ``cs1`` / ``cs2b``: conditional chi-squared tests of moment inequalities on
  the binned p-curve (non-increasingness; 2-monotonicity plus bounds).
* ``lcm``: concavity of the p-value CDF via its least concave majorant.
* ``discontinuity``: a jump in the p-curve at a threshold.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import linalg, stats

from . import lcm as _lcm
from .constraints import BinningScheme, ConstraintSystem, cs1_system, cs2b_system
from .estimators import (
    PValueSample,
    Proportions,
    SingularCovarianceError,
    cluster_robust_covariance,
    cluster_subsample,
    deround,
    empirical_cdf,
    histogram_proportions,
    multinomial_covariance,
)
from .nullmodel import TestFamily
from .qp import project_polyhedron

__all__ = [
    "TestResult",
    "BatteryConfig",
    "cs_test",
    "lcm_operator",
    "lcm_test",
    "binomial_test",
    "fisher_test",
    "discontinuity_test",
    "run_battery",
    "ALL_TESTS",
]

log = logging.getLogger(__name__)

ALL_TESTS = ("binomial", "fisher", "cs1", "cs2b", "lcm", "discontinuity")
ACTIVE_TOL = 1e-7
MAX_STAGES = 20
STAGE_TOL = 1e-12
RANK_TOL = 1e-10

lcm_operator = _lcm.concave_majorant


@dataclass(frozen=True)
class TestResult:
    """Outcome of one test on one sample."""

    __test__ = False

    test: str
    statistic: float
    p_value: float
    reference: dict
    diagnostics: dict = field(default_factory=dict)
    applicable: bool = True

    def __post_init__(self):
        if not 0.0 <= self.p_value <= 1.0:
            raise ValueError(f"p-value {self.p_value} outside [0, 1]")

    def to_dict(self) -> dict:
        return {
            "test": self.test,
            "statistic": float(self.statistic),
            "p_value": float(self.p_value),
            "reference": dict(self.reference),
            "applicable": self.applicable,
            "diagnostics": dict(self.diagnostics),
        }


def _clip_p(p) -> float:
    return float(min(1.0, max(0.0, p)))


# ---------------------------------------------------------------------------
# Conditional chi-squared test


def _project(system, pi_hat, omega):
    try:
        L = linalg.cholesky(omega, lower=True)
    except linalg.LinAlgError as exc:
        raise SingularCovarianceError(
            "covariance matrix is not positive definite; use fewer bins or ridge=True"
        ) from exc
    z0 = linalg.solve_triangular(L, pi_hat, lower=True)
    At = system.A @ L
    sol = project_polyhedron(At, system.b, z0)
    return sol, z0, At, L @ sol.z


def _restricted_omega(q, n):
    """Multinomial covariance at the constrained fit, cells floored at half an observation."""
    full = np.append(q, 1.0 - np.sum(q))
    full = np.maximum(full, 0.5 / n)
    full = full / full.sum()
    core = full[:-1]
    return np.diag(core) - np.outer(core, core)


def cs_test(
    prop: Proportions,
    system: ConstraintSystem,
    n: Optional[int] = None,
    omega: Optional[np.ndarray] = None,
    ridge: bool = False,
    variance: str = "restricted",
) -> TestResult:
    """Conditional chi-squared test of ``A pi_{-J} <= b``.

    ``T = min_{A q <= b} n (pi_hat - q)' Omega^{-1} (pi_hat - q)`` is compared
    with a chi-squared law whose degrees of freedom equal the rank of the
    rows active at the minimiser.

    Parameters
    ----------
    omega : ndarray, optional
        Covariance of ``sqrt(n) pi_hat_{-J}``. Defaults to the multinomial
        form evaluated at ``pi_hat``.
    variance : {"restricted", "plugin"}
        ``"plugin"`` uses ``omega`` as is. ``"restricted"`` (default, only
        with the multinomial default) evaluates the multinomial covariance
        at the constrained fit itself: starting from ``pi_hat`` it alternates
        projection and re-evaluation until the fit stops moving (usually
        three projections). Cell probabilities are floored at ``0.5 / n``,
        so empty bins do not make the covariance singular. The plug-in
        weights over-reward bins with low counts and over-reject when bins
        hold a handful of observations; the restricted fit keeps the size.
    """
    if system.J != prop.J:
        raise ValueError(f"constraint system has J={system.J} but the histogram has J={prop.J}")
    if variance not in ("restricted", "plugin"):
        raise ValueError("variance must be 'restricted' or 'plugin'")
    n = prop.n_effective if n is None else int(n)
    pi_hat = prop.pi_hat_core
    restricted = variance == "restricted" and omega is None
    stages = 1
    if restricted:
        # empty bins are floored, so no stage sees a singular matrix
        q = pi_hat
        for stages in range(1, MAX_STAGES + 1):
            sol, z0, At, q_new = _project(system, pi_hat, _restricted_omega(q, n))
            moved = float(np.max(np.abs(q_new - q)))
            q = q_new
            if moved <= STAGE_TOL:
                break
    else:
        if omega is None:
            omega = multinomial_covariance(prop, ridge=ridge)
        sol, z0, At, q = _project(system, pi_hat, omega)
    diff = sol.z - z0
    primal = 0.5 * float(diff @ diff)
    lam = sol.multipliers
    dual = -0.5 * float(np.sum((At.T @ lam) ** 2)) + float(lam @ (At @ z0 - system.b))
    slack = system.A @ q - system.b
    kkt = {
        "stationarity": float(np.max(np.abs(diff + At.T @ lam))) if lam.size else 0.0,
        "primal_feasibility": float(max(0.0, np.max(slack))) if slack.size else 0.0,
        "complementarity": float(np.max(np.abs(lam * slack))) if lam.size else 0.0,
    }
    active = np.flatnonzero(np.abs(slack) <= ACTIVE_TOL * (1.0 + np.abs(system.b)))
    diag = {
        "system": system.label,
        "J": system.J,
        "K": system.K,
        "n": n,
        "variance": "restricted" if restricted else "plugin",
        "rows": system.n_rows,
        "active_rows": [
            {"k": system.provenance[r][0], "side": system.provenance[r][1], "bin": system.provenance[r][2]}
            for r in active
        ],
        "solver": sol.method,
        "variance_stages": stages,
        "iterations": sol.iterations,
        "duality_gap": primal - dual,
        "kkt": kkt,
        "projection": q.tolist(),
    }
    if active.size == 0:
        diag["df"] = 0
        return TestResult(system.label, 0.0, 1.0, {"kind": "chi_squared", "df": 0}, diag)
    sv = np.linalg.svd(system.A[active], compute_uv=False)
    df = int(np.sum(sv > RANK_TOL * sv[0])) if sv[0] > 0 else 0
    T = 2.0 * n * primal
    diag["df"] = df
    p = 1.0 if df == 0 else _clip_p(stats.chi2.sf(T, df))
    return TestResult(system.label, T, p, {"kind": "chi_squared", "df": df}, diag)


# ---------------------------------------------------------------------------
# Least concave majorant test


def lcm_statistic(values) -> tuple[float, int]:
    """``sqrt(n) sup |M G_hat - G_hat|`` for values already on ``(0, 1]``.

    The supremum is attained at a jump point from the left, so the gap is
    ``M G_hat(x) - G_hat(x-)`` maximised over jump points ``x``.
    """
    ecdf = empirical_cdf(values)
    maj = _lcm.concave_majorant(ecdf, upper=1.0)
    gaps = maj(ecdf.x) - ecdf.left_limits()
    return math.sqrt(ecdf.n) * float(np.max(gaps)), ecdf.n


def lcm_test(
    sample: PValueSample,
    alpha: float = 1.0,
    table: Optional[_lcm.LcmQuantileTable] = None,
) -> TestResult:
    """Concavity test of the p-value CDF on ``(0, alpha]``.

    p-values are renormalised to ``u = p / alpha`` before the statistic is
    formed, so the Brownian-bridge reference applies on ``[0, 1]``. Without a
    ``table`` the default one is loaded from the cache (or generated).
    """
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    diag = {"alpha": alpha}
    if table is None:
        cfg = _lcm.DEFAULT_TABLE
        table, generated = _lcm.load_or_create_table(cfg["m"], cfg["R"], cfg["seed"])
        if generated:
            msg = f"no quantile table supplied; generated default table {table.table_id}"
            log.warning(msg)
            diag["warning"] = msg
    v = sample.values
    inside = v[(v > 0.0) & (v <= alpha)]
    if inside.size == 0:
        raise ValueError(f"no p-values in (0, {alpha}]")
    T, n = lcm_statistic(inside / alpha)
    diag.update({"n": n, "table": table.table_id})
    return TestResult(
        "lcm",
        T,
        _clip_p(table.p_value(T)),
        {"kind": "simulated_lcm", "table": table.table_id, "m": table.m, "R": table.R, "seed": table.seed},
        diag,
    )


# ---------------------------------------------------------------------------
# Binomial and Fisher tests


def binomial_test(sample: PValueSample, window: Sequence[float] = (0.04, 0.05)) -> TestResult:
    """Exact binomial test for more p-values in the upper half of ``window``.

    Among the ``n0`` p-values in ``[lo, hi]``, ``k`` fall in ``(mid, hi]``.
    A non-increasing p-curve puts at most half of the mass there, so the
    p-value is ``P(Bin(n0, 1/2) >= k)``.
    """
    lo, hi = float(window[0]), float(window[1])
    if not 0.0 <= lo < hi <= 1.0:
        raise ValueError("window must satisfy 0 <= lo < hi <= 1")
    mid = 0.5 * (lo + hi)
    v = sample.values
    in_window = (v >= lo) & (v <= hi)
    n0 = int(np.sum(in_window))
    k = int(np.sum(in_window & (v > mid)))
    diag = {"window": [lo, hi], "n_window": n0, "n_upper": k}
    ref = {"kind": "exact_binomial", "n": n0, "prob": 0.5}
    if n0 == 0:
        diag["reason"] = "no p-values in the window"
        return TestResult("binomial", 0.0, 1.0, ref, diag, applicable=False)
    return TestResult("binomial", float(k), _clip_p(stats.binom.sf(k - 1, n0, 0.5)), ref, diag)


def fisher_test(sample: PValueSample, alpha: float = 0.05) -> TestResult:
    """Fisher-type test for p-values accumulating just below ``alpha``.

    Uses p-values in ``(0, alpha)``. Under a non-increasing p-curve
    ``(alpha - P) / alpha`` is stochastically no smaller than uniform, so
    ``-2 sum log((alpha - P_i) / alpha)`` is compared with chi-squared on
    ``2n`` degrees of freedom, rejecting for large values.
    """
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    v = sample.values
    use = v[(v > 0.0) & (v < alpha)]
    n_at = int(np.sum(v == alpha))
    if use.size == 0:
        raise ValueError(f"no p-values in (0, {alpha})")
    stat = float(-2.0 * np.sum(np.log1p(-use / alpha)))
    df = 2 * use.size
    diag = {"alpha": alpha, "n": int(use.size), "n_excluded_at_alpha": n_at}
    return TestResult("fisher", stat, _clip_p(stats.chi2.sf(stat, df)), {"kind": "chi_squared", "df": df}, diag)


# ---------------------------------------------------------------------------
# Discontinuity test


def _local_linear_intercept(x, y, h):
    """Weighted least-squares intercept at 0 and its smoother weights."""
    w = np.maximum(0.0, 1.0 - np.abs(x) / h)
    X = np.column_stack([np.ones_like(x), x])
    XtW = X.T * w
    # intercept = e1' (X'WX)^{-1} X'W y = ell' y
    ell = np.linalg.solve(XtW @ X, XtW)[0]
    return float(ell @ y), ell


def discontinuity_test(
    sample: PValueSample,
    threshold: float = 0.05,
    bandwidth: Optional[float] = None,
) -> TestResult:
    """Test for a jump of the p-curve at ``threshold``.

    The p-values are binned with width ``2 s / sqrt(n)`` (``s`` the sample
    standard deviation) on each side of the threshold, which is itself a bin
    edge; bins are right-closed, so p-values equal to the threshold count on
    the left. Local-linear fits with a triangular kernel estimate the
    log-density limits from each side, and the Wald statistic for their
    difference is referred to the standard normal. The default bandwidth is
    ``1.5 s n^(-1/5)`` per side, clipped to the available range.
    """
    v = sample.values
    n = v.size
    if n < 2:
        raise ValueError("discontinuity test needs at least two p-values")
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    s = float(np.std(v, ddof=1))
    if not s > 0:
        raise ValueError("p-values have zero spread")
    width = 2.0 * s / math.sqrt(n)
    room = {"left": threshold, "right": float(min(1.0, v.max())) - threshold}
    if bandwidth is None:
        h_rule = 1.5 * s * n ** (-0.2)
        h = {side: min(h_rule, r) for side, r in room.items()}
    else:
        if not bandwidth > 0:
            raise ValueError("bandwidth must be positive")
        for side, r in room.items():
            if bandwidth > r + 1e-12:
                raise ValueError(f"bandwidth {bandwidth} exceeds the available range {r:.6g} on the {side}")
        h = {side: float(bandwidth) for side in room}
    est, var, bins = {}, {}, {}
    for side, sign in (("left", -1.0), ("right", 1.0)):
        nb = int(math.floor(h[side] / width + 1e-9))
        if nb < 2:
            raise ValueError(
                f"only {nb} bin(s) of width {width:.4g} fit within the bandwidth on the {side}; "
                "the sample is too small or the support is one-sided"
            )
        edges = threshold + sign * width * np.arange(nb + 1)
        lo, hi = (edges[::-1][:-1], edges[::-1][1:]) if sign < 0 else (edges[:-1], edges[1:])
        counts = np.array([np.sum((v > a) & (v <= b)) for a, b in zip(lo, hi)], dtype=float)
        if counts.sum() == 0:
            raise ValueError(f"no observations within the bandwidth on the {side} of the threshold")
        mids = 0.5 * (lo + hi) - threshold
        dens = counts / (n * width)
        f0, ell = _local_linear_intercept(mids, dens, h[side])
        if not f0 > 0:
            raise ValueError(f"non-positive density estimate on the {side} of the threshold")
        est[side] = f0
        # Var(count_j / (n w)) ~ f_j / (n w) with f_j estimated by the bin density
        var[side] = float(np.sum(ell**2 * dens) / (n * width)) / f0**2
        bins[side] = nb
    theta = math.log(est["right"]) - math.log(est["left"])
    se = math.sqrt(var["left"] + var["right"])
    z = theta / se if se > 0 else 0.0
    diag = {
        "threshold": threshold,
        "n": int(n),
        "bin_width": width,
        "bandwidth": h,
        "bins": bins,
        "density_left": est["left"],
        "density_right": est["right"],
        "log_difference": theta,
        "se": se,
    }
    return TestResult("discontinuity", z, _clip_p(2.0 * stats.norm.sf(abs(z))), {"kind": "normal"}, diag)


# ---------------------------------------------------------------------------
# Battery


@dataclass(frozen=True)
class BatteryConfig:
    """Settings shared by the tests of one battery run."""

    alpha: float = 0.15
    J: int = 30
    K: int = 2
    family: str = "two_sided_t"
    tests: tuple = ALL_TESTS
    deround: bool = False
    cluster_subsample: bool = False
    cluster_robust: bool = False
    ridge: bool = False
    variance: str = "restricted"
    fisher_alpha: float = 0.05
    threshold: float = 0.05
    binomial_window: tuple = (0.04, 0.05)
    seed: int = 0

    def __post_init__(self):
        unknown = set(self.tests) - set(ALL_TESTS)
        if unknown:
            raise ValueError(f"unknown tests {sorted(unknown)}; choose from {list(ALL_TESTS)}")
        TestFamily.parse(self.family)

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "J": self.J,
            "K": self.K,
            "family": TestFamily.parse(self.family).value,
            "tests": list(self.tests),
            "deround": self.deround,
            "cluster_subsample": self.cluster_subsample,
            "cluster_robust": self.cluster_robust,
            "ridge": self.ridge,
            "variance": self.variance,
            "fisher_alpha": self.fisher_alpha,
            "threshold": self.threshold,
            "binomial_window": list(self.binomial_window),
            "seed": self.seed,
        }


def prepare_sample(sample: PValueSample, config: BatteryConfig) -> PValueSample:
    """Apply de-rounding and cluster subsampling with independent seeded streams."""
    ss = np.random.SeedSequence(config.seed)
    s_round, s_cluster = ss.spawn(2)
    if config.deround and sample.rounding_digits is not None:
        sample = deround(sample, s_round)
    if config.cluster_subsample:
        sample = cluster_subsample(sample, s_cluster)
    return sample


def _cs(sample, config, label):
    binning = BinningScheme(config.J, config.alpha)
    prop = histogram_proportions(sample, binning)
    omega = None
    if config.cluster_robust and sample.cluster_id is not None:
        omega = cluster_robust_covariance(sample, binning, ridge=config.ridge)
    if label == "cs1":
        system = cs1_system(binning)
    else:
        system = cs2b_system(binning, config.family, prop.G_alpha_hat, config.K)
    res = cs_test(prop, system, omega=omega, ridge=config.ridge, variance=config.variance)
    res.diagnostics.update({"alpha": config.alpha, "G_alpha_hat": prop.G_alpha_hat})
    return res


def run_battery(
    sample: PValueSample,
    config: BatteryConfig = BatteryConfig(),
    lcm_table: Optional[_lcm.LcmQuantileTable] = None,
    prepared: bool = False,
) -> tuple[list, list]:
    """Run the configured tests; returns ``(results, errors)``.

    A test that cannot be computed on this sample (for example empty bins)
    is reported in ``errors`` as ``{"test", "error"}`` instead of aborting
    the battery.
    """
    if not prepared:
        sample = prepare_sample(sample, config)
    runners = {
        "binomial": lambda: binomial_test(sample, config.binomial_window),
        "fisher": lambda: fisher_test(sample, config.fisher_alpha),
        "cs1": lambda: _cs(sample, config, "cs1"),
        "cs2b": lambda: _cs(sample, config, "cs2b"),
        "lcm": lambda: lcm_test(sample, config.alpha, lcm_table),
        "discontinuity": lambda: discontinuity_test(sample, config.threshold),
    }
    results, errors = [], []
    for name in config.tests:
        try:
            results.append(runners[name]())
        except (ValueError, ArithmeticError) as exc:
            errors.append({"test": name, "error": str(exc)})
    return results, errors
