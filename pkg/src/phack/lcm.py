"""Least concave majorants and the Brownian-bridge reference distribution.

The least concave majorant of a function known at sorted points is the upper
convex hull of those points. A single monotone-chain pass finds it in linear
time once the points are sorted; the kernels are compiled with numba because
the bridge simulation calls them once per draw.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from pathlib import Path
import numba
import numpy as np

__all__ = [
    "ConcaveMajorant",
    "LcmQuantileTable",
    "upper_hull_indices",
    "concave_majorant",
    "bridge_sup_gaps",
    "grid_gaps",
    "brownian_bridge_sup_draws",
    "load_or_create_table",
    "cache_dir",
    "DEFAULT_TABLE",
    "CACHE_ENV",
]

log = logging.getLogger(__name__)

CACHE_ENV = "PHACK_CACHE_DIR"
TABLE_FORMAT = 2
LEVELS = (0.80, 0.90, 0.95, 0.99)
DEFAULT_TABLE = {"m": 1000, "R": 10_000, "seed": 20_240_601}
_CHUNK = 1000
_N_STRATA = 50


@numba.njit(cache=True)
def _hull_kernel(x, y, out):
    """Indices of the upper hull of points sorted by strictly increasing x."""
    k = 0
    for i in range(x.size):
        while k >= 2:
            a = out[k - 2]
            b = out[k - 1]
            cross = (x[b] - x[a]) * (y[i] - y[a]) - (y[b] - y[a]) * (x[i] - x[a])
            if cross >= 0.0:  # b is not strictly above the chord a -> i
                k -= 1
            else:
                break
        out[k] = i
        k += 1
    return k


def upper_hull_indices(x, y) -> np.ndarray:
    """Vertices of the least concave majorant of points ``(x_i, y_i)``.

    ``x`` must be strictly increasing. Collinear points are not vertices.
    """
    x = np.ascontiguousarray(x, dtype=float)
    y = np.ascontiguousarray(y, dtype=float)
    if x.size == 0:
        raise ValueError("least concave majorant of an empty point set")
    if x.size > 1 and not np.all(np.diff(x) > 0):
        raise ValueError("x must be strictly increasing")
    out = np.empty(x.size, dtype=np.int64)
    k = _hull_kernel(x, y, out)
    return out[:k]


@dataclass(frozen=True, eq=False)
class ConcaveMajorant:
    """Piecewise-linear concave function through its hull vertices."""

    x: np.ndarray
    y: np.ndarray

    def __call__(self, t):
        out = np.interp(t, self.x, self.y)
        return out[()] if np.ndim(out) == 0 else out


def concave_majorant(ecdf, upper: float = 1.0) -> ConcaveMajorant:
    """Least concave majorant of an empirical CDF on ``[0, upper]``.

    ``ecdf`` has jump points ``x`` and right-continuous values ``y`` there
    (e.g. :class:`~phack.estimators.StepFunction`). The majorant of a
    nondecreasing step function is the hull of its upper-left corners
    ``(x_i, y_i)`` together with ``(0, 0)`` and ``(upper, 1)``.
    """
    xs, ys = np.asarray(ecdf.x, dtype=float), np.asarray(ecdf.y, dtype=float)
    if xs.size == 0:
        raise ValueError("least concave majorant of an empty ECDF")
    if xs[0] <= 0.0 or xs[-1] > upper:
        raise ValueError(f"ECDF jumps must lie in (0, {upper}]")
    px = np.concatenate([[0.0], xs])
    py = np.concatenate([[0.0], ys])
    if xs[-1] < upper:
        px = np.append(px, upper)
        py = np.append(py, py[-1])
    idx = upper_hull_indices(px, py)
    return ConcaveMajorant(px[idx], py[idx])


@numba.njit(cache=True)
def _bridge_gap_rows(B, U, dt):
    """Per path: sup of (majorant - path) and sup of (-path), refined within grid cells.

    Given the grid values, the path inside each cell is an independent
    Brownian bridge, whose minimum is drawn exactly from ``U`` by inverting
    its conditional CDF. The majorant comes from the grid points and is read
    off at the cell midpoint.
    """
    R, npts = B.shape
    gaps = np.empty(R)
    lows = np.empty(R)
    x = np.arange(npts) * dt
    hull = np.empty(npts, dtype=np.int64)
    for r in range(R):
        y = B[r]
        k = _hull_kernel(x, y, hull)
        best = 0.0
        low = 0.0
        for s in range(k - 1):
            a = hull[s]
            b = hull[s + 1]
            slope = (y[b] - y[a]) / (x[b] - x[a])
            for i in range(a, b):
                ya = y[i]
                yb = y[i + 1]
                cell_min = 0.5 * (ya + yb - np.sqrt((ya - yb) ** 2 - 2.0 * dt * np.log(U[r, i])))
                if -cell_min > low:
                    low = -cell_min
                gap = y[a] + slope * (x[i] + 0.5 * dt - x[a]) - cell_min
                if gap > best:
                    best = gap
        gaps[r] = best
        lows[r] = low
    return gaps, lows


def bridge_sup_gaps(paths, uniforms):
    """``(||M B - B||_inf, sup(-B))`` per row of ``paths`` on an equispaced grid of [0, 1].

    ``uniforms`` has one U(0, 1) draw per grid cell, shape ``(R, m)``.
    """
    paths = np.ascontiguousarray(np.atleast_2d(paths), dtype=float)
    uniforms = np.ascontiguousarray(np.atleast_2d(uniforms), dtype=float)
    if uniforms.shape != (paths.shape[0], paths.shape[1] - 1):
        raise ValueError("need one uniform per grid cell")
    return _bridge_gap_rows(paths, uniforms, 1.0 / (paths.shape[1] - 1))


def grid_gaps(paths) -> np.ndarray:
    """``max_i (M B - B)(t_i)`` over the grid points only (no within-cell refinement)."""
    paths = np.ascontiguousarray(np.atleast_2d(paths), dtype=float)
    x = np.linspace(0.0, 1.0, paths.shape[1])
    out = np.empty(paths.shape[0])
    for r, y in enumerate(paths):
        idx = upper_hull_indices(x, y)
        out[r] = np.max(np.interp(x, x[idx], y[idx]) - y)
    return out


def _bridge_chunk(rng, rows, m):
    incr = rng.standard_normal((rows, m)) / np.sqrt(m)
    W = np.zeros((rows, m + 1))
    np.cumsum(incr, axis=1, out=W[:, 1:])
    t = np.arange(m + 1) / m
    return W - t * W[:, -1:]


def _strata_weights(lows, n_strata):
    """Post-stratification weights on the exact law of sup(-B): P(sup(-B) <= y) = 1 - exp(-2 y^2)."""
    u = -np.expm1(-2.0 * lows * lows)
    s = np.minimum((u * n_strata).astype(np.int64), n_strata - 1)
    counts = np.bincount(s, minlength=n_strata)
    if np.any(counts == 0):
        return np.full(lows.size, 1.0 / lows.size)
    return (1.0 / n_strata) / counts[s]


@dataclass(frozen=True, eq=False)
class LcmQuantileTable:
    """Weighted draws of ``||M B - B||_inf`` for a standard Brownian bridge ``B``.

    ``draws`` are sorted ascending and ``weights`` (summing to one) are the
    post-stratification weights of the matching draws.
    """

    m: int
    R: int
    seed: int
    draws: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        cum = np.cumsum(self.weights)
        # tail[i] = total weight of draws[i:]
        tail = np.concatenate([[1.0], 1.0 - cum[:-1]])
        object.__setattr__(self, "_cum", cum)
        object.__setattr__(self, "_tail", np.clip(tail, 0.0, 1.0))

    @property
    def levels(self) -> tuple:
        return LEVELS

    @property
    def quantiles(self) -> dict:
        return {lv: self.quantile(lv) for lv in LEVELS}

    @property
    def table_id(self) -> str:
        return f"lcm-bridge-m{self.m}-R{self.R}-seed{self.seed}-v{TABLE_FORMAT}"

    def quantile(self, level: float) -> float:
        """Smallest draw whose weighted CDF reaches ``level``."""
        if not 0.0 < level < 1.0:
            raise ValueError("quantile level must lie in (0, 1)")
        i = int(np.searchsorted(self._cum, level - 1e-12, side="left"))
        return float(self.draws[min(i, self.draws.size - 1)])

    def p_value(self, statistic: float) -> float:
        """Weighted share of simulated draws at least as large as ``statistic``."""
        i = int(np.searchsorted(self.draws, statistic, side="left"))
        return 0.0 if i >= self.draws.size else float(self._tail[i])

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        with open(tmp, "wb") as fh:
            np.savez(
                fh,
                draws=self.draws,
                weights=self.weights,
                meta=np.array([self.m, self.R, self.seed, TABLE_FORMAT], dtype=np.int64),
            )
        os.replace(tmp, path)
        return path

    @classmethod
    def load(cls, path) -> "LcmQuantileTable":
        with np.load(path) as data:
            m, R, seed, fmt = (int(v) for v in data["meta"])
            if fmt != TABLE_FORMAT:
                raise ValueError(f"quantile table format {fmt} is not supported (expected {TABLE_FORMAT})")
            return cls(m, R, seed, data["draws"].copy(), data["weights"].copy())


def brownian_bridge_sup_draws(m: int = 1000, R: int = 10_000, seed: int = 0) -> LcmQuantileTable:
    """Simulate ``||M B - B||_inf`` for a Brownian bridge on an ``m``-step grid, ``R`` times.

    The bridge is ``B_t = W_t - t W_1`` from Gaussian random-walk increments,
    with the exact bridge minimum drawn inside each grid cell. Draws are
    post-stratified on ``sup(-B)``, whose law is known in closed form, which
    lowers the Monte Carlo error of the quantiles. Output depends only on
    ``(m, R, seed)``.
    """
    if m < 100:
        raise ValueError("bridge grid needs m >= 100 steps")
    if R < 1000:
        raise ValueError("need at least R = 1000 replications")
    rng = np.random.default_rng(seed)
    gaps = np.empty(R)
    lows = np.empty(R)
    for start in range(0, R, _CHUNK):
        rows = min(_CHUNK, R - start)
        paths = _bridge_chunk(rng, rows, m)
        uniforms = rng.random((rows, m))
        gaps[start : start + rows], lows[start : start + rows] = bridge_sup_gaps(paths, uniforms)
    weights = _strata_weights(lows, _N_STRATA)
    order = np.argsort(gaps, kind="stable")
    return LcmQuantileTable(m, R, seed, gaps[order], weights[order])


def cache_dir() -> Path:
    env = os.environ.get(CACHE_ENV)
    if env:
        return Path(env)
    return Path(os.environ.get("XDG_CACHE_HOME", Path.home() / ".cache")) / "phack"


def _cache_path(m, R, seed) -> Path:
    return cache_dir() / f"lcm_bridge_m{m}_R{R}_seed{seed}_v{TABLE_FORMAT}.npz"


def load_or_create_table(m: int, R: int, seed: int, persist: bool = True) -> tuple[LcmQuantileTable, bool]:
    """Cached table for ``(m, R, seed)``; the flag says whether it was generated now."""
    path = _cache_path(m, R, seed)
    if path.exists():
        try:
            return LcmQuantileTable.load(path), False
        except (OSError, ValueError, KeyError) as exc:
            log.warning("ignoring unreadable quantile table %s: %s", path, exc)
    table = brownian_bridge_sup_draws(m, R, seed)
    if persist:
        try:
            table.save(path)
        except OSError as exc:
            log.warning("could not cache quantile table at %s: %s", path, exc)
    return table, True
