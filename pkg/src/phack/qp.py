"""Euclidean projection onto a polyhedron by a dual active-set method.

Solves ``min_z 0.5 ||z - z0||^2`` subject to ``G z <= h``. This is the
Goldfarb-Idnani scheme specialised to an identity Hessian: start from the
unconstrained minimiser ``z0`` (dual feasible), repeatedly add the most
violated constraint, and drop constraints whose multipliers would turn
negative. Every iterate is dual feasible, so the method stops at the first
primal feasible point, which is optimal.

Problem sizes in this package are small (tens of variables, a few hundred
rows), so the active-set basis is refactorised by QR at every step instead of
being updated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize

__all__ = ["ProjectionResult", "project_polyhedron", "least_distance_projection", "InfeasibleProblemError"]


class InfeasibleProblemError(ArithmeticError):
    """The constraint set is empty."""


@dataclass(frozen=True)
class ProjectionResult:
    z: np.ndarray
    multipliers: np.ndarray  # one per row of G, zero for inactive rows
    iterations: int
    method: str

    def objective(self, z0) -> float:
        return 0.5 * float(np.sum((self.z - z0) ** 2))


def _null_and_solve(N, n_p, tol):
    """Split ``n_p`` into its component ``d`` orthogonal to range(N) and coefficients ``r``."""
    if N.shape[1] == 0:
        return n_p.copy(), np.empty(0)
    Q, R = np.linalg.qr(N)
    coef = Q.T @ n_p
    r = np.linalg.solve(R, coef)
    d = n_p - Q @ coef
    if np.linalg.norm(d) <= tol * np.linalg.norm(n_p):
        d = np.zeros_like(d)
    return d, r


def _goldfarb_idnani(G, h, z0, tol, max_iter, bland):
    m, dim = G.shape
    z = z0.astype(float).copy()
    active: list[int] = []
    u = np.empty(0)
    scale = np.maximum(1.0, np.abs(h))
    it = 0
    while True:
        viol = (G @ z - h) / scale
        viol[active] = -np.inf
        if bland:
            cand = np.flatnonzero(viol > tol)
            if cand.size == 0:
                break
            p = int(cand[0])
        else:
            p = int(np.argmax(viol))
            if viol[p] <= tol:
                break
        n_p = G[p]
        u_plus = np.append(u, 0.0)
        while True:
            it += 1
            if it > max_iter:
                return None
            N = G[active].T if active else np.zeros((dim, 0))
            d, r = _null_and_solve(N, n_p, 1e-10)
            # partial step: largest step keeping active multipliers nonnegative
            t1, drop = np.inf, -1
            for i, ri in enumerate(r):
                if ri > 1e-14:
                    ratio = u_plus[i] / ri
                    if ratio < t1:
                        t1, drop = ratio, i
            slack = float(n_p @ z - h[p])
            dd = float(d @ n_p)
            t2 = slack / dd if dd > 1e-14 else np.inf
            if not np.isfinite(t1) and not np.isfinite(t2):
                raise InfeasibleProblemError("constraint set is empty")
            t = min(t1, t2)
            if np.isfinite(t2):
                z = z - t * d
            u_plus[:-1] -= t * r
            u_plus[-1] += t
            if t2 <= t1:
                active.append(p)
                u = np.maximum(u_plus, 0.0)
                break
            # drop the blocking constraint and retry the same p
            del active[drop]
            u_plus = np.delete(u_plus, drop)
    mult = np.zeros(m)
    if active:
        mult[active] = u
    return z, mult, it


def least_distance_projection(G, h, z0):
    """Least-distance programming via bounded least squares: fallback and test oracle."""
    # z = z0 + x,  G x <= h - G z0  <=>  (-G) x >= G z0 - h
    E = np.vstack([-G.T, (G @ z0 - h)[None, :]])
    f = np.zeros(E.shape[0])
    f[-1] = 1.0
    # scipy's nnls can stop at non-optimal points here; BVLS is reliable
    w = optimize.lsq_linear(E, f, bounds=(0.0, np.inf), method="bvls", tol=1e-15).x
    resid = E @ w - f
    if np.linalg.norm(resid) < 1e-12:
        raise InfeasibleProblemError("constraint set is empty")
    x = -resid[:-1] / resid[-1]
    mult = -w / resid[-1]
    return z0 + x, np.maximum(mult, 0.0)


def project_polyhedron(G, h, z0, tol: float = 1e-12, max_iter: int | None = None) -> ProjectionResult:
    """Project ``z0`` onto ``{z : G z <= h}`` in the Euclidean norm.

    Runs the dual active-set method with the most-violated selection rule,
    restarts with Bland's lowest-index rule if the iteration cap is hit, and
    falls back to least-distance programming as a last resort.
    """
    G = np.atleast_2d(np.asarray(G, dtype=float))
    h = np.asarray(h, dtype=float).reshape(-1)
    z0 = np.asarray(z0, dtype=float).reshape(-1)
    if G.shape != (h.size, z0.size):
        raise ValueError(f"shape mismatch: G {G.shape}, h {h.shape}, z0 {z0.shape}")
    if h.size == 0:
        return ProjectionResult(z0.copy(), np.empty(0), 0, "unconstrained")
    cap = max_iter or 20 * (h.size + z0.size)
    for bland, name in ((False, "dual-active-set"), (True, "dual-active-set-bland")):
        out = _goldfarb_idnani(G, h, z0, tol, cap, bland)
        if out is not None:
            z, mult, it = out
            return ProjectionResult(z, mult, it, name)
    z, mult = least_distance_projection(G, h, z0)
    return ProjectionResult(z, mult, cap, "least-distance")
