"""From raw p-values to the inputs of the tests.

Bins are right-closed, ``(x_{j-1}, x_j]``, everywhere in the package. The
analysis interval is ``(0, alpha]``; observations above ``alpha`` are dropped
from the proportions but kept in the total so that ``G_hat(alpha)`` can be
used to rescale upper bounds.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy import special

from .constraints import BinningScheme

__all__ = [
    "Origin",
    "PValueSample",
    "Proportions",
    "StepFunction",
    "SingularCovarianceError",
    "t_to_p",
    "deround",
    "cluster_subsample",
    "histogram_proportions",
    "multinomial_covariance",
    "cluster_robust_covariance",
    "empirical_cdf",
]

NOT_ROUNDED = -1


class Origin(str, enum.Enum):
    REPORTED_P = "reported_p"
    CONVERTED_FROM_T = "converted_from_t"


class SingularCovarianceError(ValueError):
    """Raised when empty bins make the proportion covariance singular."""


@dataclass(frozen=True, eq=False)
class PValueSample:
    """Observed p-values with optional cluster labels and rounding metadata.

    Parameters
    ----------
    values : array_like
        p-values in ``(0, 1]``. A value of exactly 0 is allowed only when its
        ``rounding_digits`` entry marks it as a rounded zero.
    cluster_id : sequence of str, optional
        One label per observation (e.g. the paper a result comes from).
    origin : sequence of str, optional
        ``"reported_p"`` or ``"converted_from_t"`` per observation.
    rounding_digits : array_like of int, optional
        Number of reported decimals, ``-1`` when the value is not rounded.
    """

    values: np.ndarray
    cluster_id: Optional[np.ndarray] = None
    origin: Optional[np.ndarray] = None
    rounding_digits: Optional[np.ndarray] = None

    def __post_init__(self):
        v = np.array(self.values, dtype=float).reshape(-1)
        n = v.size
        digits = None
        if self.rounding_digits is not None:
            digits = np.array(self.rounding_digits, dtype=np.int64).reshape(-1)
            if digits.size != n:
                raise ValueError("rounding_digits must have one entry per observation")
            if np.any(digits < NOT_ROUNDED):
                raise ValueError("rounding_digits must be >= 0 (or -1 for unrounded values)")
        rounded_zero = (v == 0.0) & (digits >= 0) if digits is not None else np.zeros(n, bool)
        bad = ~(((v > 0.0) & (v <= 1.0)) | rounded_zero)
        if np.any(bad):
            raise ValueError(f"p-values must lie in (0, 1]; offending positions {np.flatnonzero(bad)[:10].tolist()}")
        clusters = None
        if self.cluster_id is not None:
            clusters = np.array([str(c) for c in self.cluster_id], dtype=object)
            if clusters.size != n:
                raise ValueError("cluster labels must be present for all observations or none")
        origin = np.array(
            [Origin(o).value for o in self.origin] if self.origin is not None else [Origin.REPORTED_P.value] * n,
            dtype=object,
        )
        if origin.size != n:
            raise ValueError("origin must have one entry per observation")
        for name, arr in (("values", v), ("cluster_id", clusters), ("origin", origin), ("rounding_digits", digits)):
            if arr is not None:
                arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return int(self.values.size)

    def __len__(self) -> int:
        return self.n

    def subset(self, index) -> "PValueSample":
        index = np.asarray(index)
        pick = (lambda a: None if a is None else a[index])
        return PValueSample(self.values[index], pick(self.cluster_id), pick(self.origin), pick(self.rounding_digits))

    @classmethod
    def empty(cls) -> "PValueSample":
        return cls(np.empty(0))


def t_to_p(t):
    """Two-sided normal p-value ``2 (1 - Phi(|t|))``."""
    t = np.asarray(t, dtype=float)
    if not np.all(np.isfinite(t)):
        raise ValueError("t statistics must be finite")
    out = 2.0 * special.ndtr(-np.abs(t))
    return out[()] if out.ndim == 0 else out


def deround(sample: PValueSample, seed) -> PValueSample:
    """Spread rounded p-values uniformly over their rounding interval.

    A value reported with ``k`` decimals gets ``u * 10**-k`` added, with
    ``u ~ U(-0.5, 0.5]`` (``U(0, 0.5]`` for rounded zeros). Results are
    clipped to 1 and the rounding marker is cleared.
    """
    if sample.rounding_digits is None:
        raise ValueError("de-rounding needs rounding_digits; mark unrounded values with -1")
    rng = np.random.default_rng(seed)
    digits = sample.rounding_digits
    mask = digits >= 0
    v = sample.values.copy()
    # 0.5 - U[0, 1) * width lies in (lower, 0.5]
    draws = rng.random(sample.n)
    lower = np.where(v == 0.0, 0.0, -0.5)
    u = 0.5 - draws * (0.5 - lower)
    scale = np.power(10.0, -np.where(mask, digits, 0).astype(float))
    v = np.where(mask, np.minimum(v + u * scale, 1.0), v)
    new_digits = np.where(mask, NOT_ROUNDED, digits)
    return replace(sample, values=v, rounding_digits=new_digits)


def cluster_subsample(sample: PValueSample, seed) -> PValueSample:
    """Keep one uniformly chosen observation per cluster."""
    if sample.cluster_id is None:
        raise ValueError("cluster subsampling needs cluster labels")
    rng = np.random.default_rng(seed)
    labels, inverse = np.unique(sample.cluster_id.astype(str), return_inverse=True)
    order = np.argsort(inverse, kind="stable")
    starts = np.searchsorted(inverse[order], np.arange(labels.size))
    sizes = np.diff(np.append(starts, sample.n))
    picks = order[starts + (rng.random(labels.size) * sizes).astype(np.int64)]
    return sample.subset(np.sort(picks))


@dataclass(frozen=True, eq=False)
class Proportions:
    """Histogram of the p-values inside ``(0, alpha]``."""

    counts: np.ndarray
    binning: BinningScheme
    n_total: int
    inside: np.ndarray = field(repr=False)  # bin index (0-based) per observation, -1 if outside

    @property
    def J(self) -> int:
        return self.binning.J

    @property
    def n_effective(self) -> int:
        return int(self.counts.sum())

    @property
    def n_outside(self) -> int:
        return self.n_total - self.n_effective

    @property
    def pi_hat(self) -> np.ndarray:
        return self.counts / self.n_effective

    @property
    def pi_hat_core(self) -> np.ndarray:
        return self.pi_hat[:-1]

    @property
    def G_alpha_hat(self) -> float:
        return self.n_effective / self.n_total


def _bin_index(values, edges):
    # searchsorted with side="left" puts a value equal to an edge in the bin it closes
    idx = np.searchsorted(edges, values, side="left") - 1
    return np.where((values > 0.0) & (values <= edges[-1]), idx, -1)


def histogram_proportions(sample: PValueSample, binning: BinningScheme) -> Proportions:
    """Bin counts and proportions over ``(0, alpha]``."""
    idx = _bin_index(sample.values, binning.edges)
    counts = np.bincount(idx[idx >= 0], minlength=binning.J).astype(float)
    if counts.sum() == 0:
        raise ValueError(f"no observations in the analysis interval (0, {binning.alpha}]")
    return Proportions(counts, binning, sample.n, idx)


def _check_nonsingular(pi_hat):
    empty = np.flatnonzero(pi_hat <= 0.0)
    if empty.size:
        bins = ", ".join(str(j + 1) for j in empty)
        raise SingularCovarianceError(
            f"covariance of the proportions is singular: bins {bins} are empty; "
            "use fewer bins or pass ridge=True"
        )


def _ridge(omega):
    m = omega.shape[0]
    return omega + (1e-10 * np.trace(omega) / m) * np.eye(m)


def multinomial_covariance(prop: Proportions, ridge: bool = False) -> np.ndarray:
    """``diag(pi_{-J}) - pi_{-J} pi_{-J}'`` (covariance of sqrt(n) pi_hat_{-J})."""
    if not ridge:
        _check_nonsingular(prop.pi_hat)
    core = prop.pi_hat_core
    omega = np.diag(core) - np.outer(core, core)
    return _ridge(omega) if ridge else omega


def cluster_robust_covariance(sample: PValueSample, binning: BinningScheme, ridge: bool = False) -> np.ndarray:
    """Cluster sandwich ``(1/n) sum_c v_c v_c'`` with ``v_c = sum_{i in c} (z_i - pi_hat_{-J})``.

    Only observations inside ``(0, alpha]`` enter, matching the proportions.
    With singleton clusters this equals :func:`multinomial_covariance`.
    """
    if sample.cluster_id is None:
        raise ValueError("cluster-robust covariance needs cluster labels")
    prop = histogram_proportions(sample, binning)
    if not ridge:
        _check_nonsingular(prop.pi_hat)
    keep = prop.inside >= 0
    idx = prop.inside[keep]
    J = binning.J
    z = np.zeros((idx.size, J - 1))
    core = idx < J - 1
    z[np.flatnonzero(core), idx[core]] = 1.0
    resid = z - prop.pi_hat_core
    _, groups = np.unique(sample.cluster_id[keep].astype(str), return_inverse=True)
    v = np.zeros((groups.max() + 1, J - 1))
    np.add.at(v, groups, resid)
    omega = v.T @ v / idx.size
    return _ridge(omega) if ridge else omega


@dataclass(frozen=True, eq=False)
class StepFunction:
    """Right-continuous empirical CDF with jumps at ``x`` and values ``y`` there."""

    x: np.ndarray
    y: np.ndarray
    n: int

    def __call__(self, p):
        p = np.asarray(p, dtype=float)
        i = np.searchsorted(self.x, p, side="right")
        out = np.where(i > 0, self.y[np.maximum(i - 1, 0)], 0.0)
        return out[()] if out.ndim == 0 else out

    def left_limits(self) -> np.ndarray:
        """``G(x-)`` at each jump point."""
        return np.concatenate([[0.0], self.y[:-1]])


def empirical_cdf(values, upper: Optional[float] = None) -> StepFunction:
    """Empirical CDF; with ``upper`` set, restricted and renormalised to ``(0, upper]``."""
    v = np.asarray(getattr(values, "values", values), dtype=float)
    if upper is not None:
        v = v[(v > 0.0) & (v <= upper)]
    if v.size == 0:
        raise ValueError("empirical CDF of an empty sample")
    x, counts = np.unique(v, return_counts=True)
    return StepFunction(x, np.cumsum(counts) / v.size, int(v.size))
