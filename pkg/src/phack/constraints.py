"""Moment-inequality systems ``A q <= b`` for binned p-curves.

With ``J`` equal-width bins on ``(0, alpha]`` and proportions ``pi``, the null
of K-monotonicity plus upper bounds reads

    0 <= (-1)^k Delta^k pi <= theta^(k),   k = 0, ..., K.

Only ``pi_{-J}`` (the first ``J - 1`` proportions) is free because the
proportions sum to one: ``pi = e_J - F pi_{-J}`` with ``F = [-I; 1']``.
Stacking ``D^k`` into ``Dk = [-1, 1]' (x) [I_J; D^1; ...; D^K]`` gives

    A = Dk F,   b = Dk e_J - c,   c = [-theta^(0); ...; -theta^(K); 0; ...; 0]

so that ``A pi_{-J} <= b`` is equivalent to ``c <= Dk pi``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from decimal import Decimal
from typing import Sequence, Union

import numpy as np

from .bounds import BinBoundTable, bin_bound_table, rescale_bounds
from .nullmodel import TestFamily

__all__ = [
    "BinningScheme",
    "ConstraintSystem",
    "differencing_matrix",
    "kth_difference_operator",
    "build_constraint_system",
    "cs1_system",
    "cs2b_system",
    "MONOTONICITY_ONLY",
]

MONOTONICITY_ONLY = "monotonicity-only"


@dataclass(frozen=True)
class BinningScheme:
    """``J`` equal-width bins ``(x_{j-1}, x_j]`` covering ``(0, alpha]``."""

    J: int
    alpha: float = 1.0

    def __post_init__(self):
        if int(self.J) != self.J or self.J < 2:
            raise ValueError(f"need at least two bins, got J={self.J}")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        object.__setattr__(self, "J", int(self.J))
        object.__setattr__(self, "alpha", float(self.alpha))

    @property
    def edges(self) -> np.ndarray:
        # decimal arithmetic keeps "round" edges such as 0.05 exact in binary
        # (0.15 / 3 in floating point is 0.049999999999999996)
        a = Decimal(repr(self.alpha))
        edges = np.array([float(a * j / self.J) for j in range(self.J + 1)])
        return edges

    @property
    def width(self) -> float:
        return self.alpha / self.J

    def to_dict(self) -> dict:
        return {"J": self.J, "alpha": self.alpha}


def differencing_matrix(m: int) -> np.ndarray:
    """The ``(m-1) x m`` first-difference matrix with rows ``(-1, 1)``."""
    if m < 2:
        raise ValueError(f"differencing matrix needs m >= 2, got {m}")
    D = np.zeros((m - 1, m))
    idx = np.arange(m - 1)
    D[idx, idx] = -1.0
    D[idx, idx + 1] = 1.0
    return D


def kth_difference_operator(J: int, k: int) -> np.ndarray:
    """``D^k = (-1)^k D_{J-k+1} ... D_J`` so that ``D^k pi = (-1)^k Delta^k pi``.

    ``k = 0`` returns the identity.
    """
    if k == 0:
        return np.eye(J)
    if not 1 <= k <= J - 1:
        raise ValueError(f"difference order must satisfy 1 <= k <= J-1, got k={k}, J={J}")
    out = differencing_matrix(J)
    for m in range(J - 1, J - k, -1):
        out = differencing_matrix(m) @ out
    return out if k % 2 == 0 else 0.0 - out


@dataclass(frozen=True)
class ConstraintSystem:
    """Rows of ``A q <= b`` with ``q = pi_{-J}``.

    ``provenance[r] = (k, side, j)`` says row ``r`` encodes the lower
    (``0 <= (-1)^k Delta^k_j``) or upper (``(-1)^k Delta^k_j <= theta``)
    inequality for bin ``j`` (1-based).
    """

    A: np.ndarray
    b: np.ndarray
    K: int
    J: int
    provenance: tuple
    label: str = "custom"

    @property
    def n_rows(self) -> int:
        return self.A.shape[0]

    def residuals(self, q) -> np.ndarray:
        """``A q - b``; feasible points have every entry <= 0."""
        return self.A @ np.asarray(q, dtype=float) - self.b

    def is_feasible(self, q, tol: float = 1e-9) -> bool:
        return bool(np.all(self.residuals(q) <= tol))

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "J": self.J,
            "K": self.K,
            "A": self.A.tolist(),
            "b": self.b.tolist(),
            "rows": [{"k": k, "side": side, "bin": j} for k, side, j in self.provenance],
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, d: dict) -> "ConstraintSystem":
        prov = tuple((r["k"], r["side"], r["bin"]) for r in d["rows"])
        A = np.asarray(d["A"], dtype=float).reshape(len(prov), d["J"] - 1)
        return cls(A, np.asarray(d["b"], dtype=float), d["K"], d["J"], prov, d.get("label", "custom"))


def _selection_matrix(J: int) -> np.ndarray:
    # F = [-I_{J-1}; 1'] so that pi = e_J - F pi_{-J}
    return np.vstack([-np.eye(J - 1), np.ones((1, J - 1))])


def build_constraint_system(
    binning: BinningScheme,
    K: int,
    bound_tables: Union[str, Sequence[BinBoundTable]] = MONOTONICITY_ONLY,
    label: str = "custom",
) -> ConstraintSystem:
    """Assemble ``(A, b)`` for K-monotonicity with optional upper bounds.

    ``bound_tables`` is either ``"monotonicity-only"`` (upper rows dropped)
    or a sequence of tables for ``k = 0..K`` computed on ``binning``.
    """
    J = binning.J
    if not 0 <= K < J:
        raise ValueError(f"need 0 <= K < J, got K={K}, J={J}")
    mono = isinstance(bound_tables, str)
    if mono and bound_tables != MONOTONICITY_ONLY:
        raise ValueError(f"unknown bound specification {bound_tables!r}")
    if not mono:
        if len(bound_tables) != K + 1:
            raise ValueError(f"need K + 1 = {K + 1} bound tables, got {len(bound_tables)}")
        edges = binning.edges
        for k, tab in enumerate(bound_tables):
            if tab.k != k:
                raise ValueError(f"bound table {k} has order {tab.k}")
            if len(tab.edges) != J + 1 or not np.allclose(tab.edges, edges, rtol=0, atol=1e-12):
                raise ValueError(f"bound table of order {k} was computed on a different binning")
            if len(tab.values) != J - k:
                raise ValueError(f"bound table of order {k} has {len(tab.values)} values, expected {J - k}")

    blocks = [kth_difference_operator(J, k) for k in range(K + 1)]
    Dstack = np.vstack(blocks)
    theta = (
        np.full(Dstack.shape[0], np.inf)
        if mono
        else np.concatenate([np.asarray(t.values, dtype=float) for t in bound_tables])
    )
    DK = np.vstack([-Dstack, Dstack])
    c = np.concatenate([-theta, np.zeros(Dstack.shape[0])])
    F = _selection_matrix(J)
    eJ = np.zeros(J)
    eJ[-1] = 1.0
    A = DK @ F
    with np.errstate(invalid="ignore"):
        b = DK @ eJ - c
    prov = [(k, "upper", j) for k in range(K + 1) for j in range(1, J - k + 1)]
    prov += [(k, "lower", j) for k in range(K + 1) for j in range(1, J - k + 1)]
    keep = np.isfinite(b)
    A, b = A[keep], b[keep]
    prov = tuple(p for p, kp in zip(prov, keep) if kp)
    return ConstraintSystem(A, b, K, J, prov, label)


def cs1_system(binning: BinningScheme) -> ConstraintSystem:
    """Non-increasingness of the binned p-curve (first differences only)."""
    sys_ = build_constraint_system(binning, 1, MONOTONICITY_ONLY, label="cs1")
    keep = [i for i, (k, _, _) in enumerate(sys_.provenance) if k == 1]
    return ConstraintSystem(
        sys_.A[keep], sys_.b[keep], 1, sys_.J, tuple(sys_.provenance[i] for i in keep), "cs1"
    )


def cs2b_system(
    binning: BinningScheme, family: TestFamily, G_alpha_hat: float = 1.0, K: int = 2
) -> ConstraintSystem:
    """2-monotonicity plus upper bounds on the proportions and their first two differences.

    ``K`` changes the highest difference order (the label stays ``cs2b``).
    For the one-sided family and ``K >= 2`` the interval must lie in (0, 1/2].
    """
    family = TestFamily.parse(family)
    if family is TestFamily.ONE_SIDED and K >= 2 and binning.alpha > 0.5:
        # one-sided p-curves are convex only where cv(p) >= 0
        raise ValueError("one-sided p-curves are K-monotone (K >= 2) only on (0, 1/2]; use alpha <= 0.5")
    tables = [bin_bound_table(family, binning, k) for k in range(K + 1)]
    if G_alpha_hat != 1.0:
        tables = [rescale_bounds(t, G_alpha_hat) for t in tables]
    return build_constraint_system(binning, K, tables, label="cs2b")
