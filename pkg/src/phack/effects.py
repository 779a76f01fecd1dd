"""Distributions of true effects across studies.

Every p-curve quantity in this package reduces to two kinds of integrals over
the effect distribution:

* tilted moments ``E[exp(c*h - h**2/2) * h**r]`` (densities and derivatives),
* the survival function ``P(h + Z > c)`` with ``Z`` standard normal (CDFs).

Each distribution provides both, in closed form where one exists and by
adaptive Gauss-Kronrod quadrature otherwise. Tilted moments are returned as a
pair ``(log_scale, scaled)`` with ``E[...] = exp(log_scale) * scaled[r]`` so
that callers can stay in log space when ``c`` is large.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, special
from scipy.stats import sampling

__all__ = [
    "EffectDistribution",
    "PointMass",
    "Normal",
    "HalfNormal",
    "Discrete",
    "FiniteMixture",
    "ContinuousEffect",
    "effect_from_dict",
]

_LOG_2PI = math.log(2.0 * math.pi)
_WEIGHT_TOL = 1e-12


def _binom_row(r: int) -> np.ndarray:
    return np.array([math.comb(r, i) for i in range(r + 1)], dtype=float)


def _gaussian_moments(m: np.ndarray, v: np.ndarray, order: int) -> np.ndarray:
    """Raw moments E[X^r], r=0..order, of N(m, v) (vectorised over m, v)."""
    m = np.asarray(m, dtype=float)
    out = np.empty((order + 1,) + m.shape)
    out[0] = 1.0
    if order >= 1:
        out[1] = m
    for r in range(2, order + 1):
        out[r] = m * out[r - 1] + (r - 1) * v * out[r - 2]
    return out


def _upper_truncated_std_moments(a: np.ndarray, order: int) -> np.ndarray:
    """E[Z^i 1{Z >= a}] for standard normal Z, i=0..order."""
    a = np.asarray(a, dtype=float)
    phi = np.exp(-0.5 * a * a - 0.5 * _LOG_2PI)
    out = np.empty((order + 1,) + a.shape)
    out[0] = special.ndtr(-a)
    if order >= 1:
        out[1] = phi
    for i in range(2, order + 1):
        # a**(i-1) * phi -> 0 as |a| -> inf; guard the inf * 0 case
        tail = np.where(phi > 0.0, np.power(a, i - 1) * phi, 0.0)
        out[i] = (i - 1) * out[i - 2] + tail
    return out


def _combine_log_scaled(log_weights, parts):
    """Mix ``(log_scale, scaled)`` pairs with log-weights into one pair."""
    logs = np.stack([lw + ls for lw, (ls, _) in zip(log_weights, parts)])
    top = np.max(logs, axis=0)
    top = np.where(np.isfinite(top), top, 0.0)
    scaled = sum(np.exp(lg - top) * sc for lg, (_, sc) in zip(logs, parts))
    return top, scaled


class EffectDistribution:
    """Base class for a distribution of true effects ``h``."""

    kind: str = "abstract"

    @property
    def nonnegative(self) -> bool:
        raise NotImplementedError

    def tilted_moments(self, c, order: int):
        """Return ``(log_scale, scaled)`` for E[exp(c h - h^2/2) h^r], r<=order."""
        raise NotImplementedError

    def survival(self, c):
        """P(h + Z > c) with Z ~ N(0, 1) independent of h."""
        raise NotImplementedError

    def reflected(self) -> "EffectDistribution":
        """Distribution of ``-h``."""
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class PointMass(EffectDistribution):
    h: float
    kind = "point_mass"

    def __post_init__(self):
        if not math.isfinite(self.h):
            raise ValueError(f"point mass location must be finite, got {self.h}")

    @property
    def nonnegative(self) -> bool:
        return self.h >= 0.0

    def tilted_moments(self, c, order):
        c = np.asarray(c, dtype=float)
        log_scale = c * self.h - 0.5 * self.h**2
        powers = np.array([self.h**r for r in range(order + 1)])
        scaled = np.broadcast_to(powers.reshape((-1,) + (1,) * c.ndim), (order + 1,) + c.shape)
        return log_scale, np.array(scaled)

    def survival(self, c):
        return special.ndtr(self.h - np.asarray(c, dtype=float))

    def reflected(self):
        return PointMass(-self.h)

    def sample(self, rng, size):
        return np.full(size, self.h, dtype=float)

    def to_dict(self):
        return {"kind": self.kind, "h": self.h}


@dataclass(frozen=True)
class Normal(EffectDistribution):
    mu: float
    sigma: float
    kind = "normal"

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")

    @property
    def nonnegative(self) -> bool:
        return False

    def tilted_moments(self, c, order):
        c = np.asarray(c, dtype=float)
        s2 = self.sigma**2
        log_scale = (c * c * s2 + 2.0 * c * self.mu - self.mu**2) / (2.0 * (1.0 + s2)) - 0.5 * math.log1p(s2)
        m = (c * s2 + self.mu) / (1.0 + s2)
        v = s2 / (1.0 + s2)
        return log_scale, _gaussian_moments(m, v, order)

    def survival(self, c):
        omega = math.sqrt(1.0 + self.sigma**2)
        return special.ndtr((self.mu - np.asarray(c, dtype=float)) / omega)

    def reflected(self):
        return Normal(-self.mu, self.sigma)

    def sample(self, rng, size):
        return rng.normal(self.mu, self.sigma, size)

    def to_dict(self):
        return {"kind": self.kind, "mu": self.mu, "sigma": self.sigma}


@dataclass(frozen=True)
class HalfNormal(EffectDistribution):
    """Half-normal on ``[0, inf)`` (``sign=+1``) or its mirror image (``sign=-1``).

    ``h + Z`` is skew-normal with scale ``sqrt(1 + sigma^2)`` and shape
    ``sign * sigma``, which gives the survival function through Owen's T.
    """

    sigma: float
    sign: int = 1
    kind = "half_normal"

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if self.sign not in (1, -1):
            raise ValueError("sign must be +1 or -1")

    @property
    def nonnegative(self) -> bool:
        return self.sign == 1

    def tilted_moments(self, c, order):
        c = np.asarray(c, dtype=float)
        s2 = self.sigma**2
        log_scale = math.log(2.0) + c * c * s2 / (2.0 * (1.0 + s2)) - 0.5 * math.log1p(s2)
        m = c * s2 / (1.0 + s2)
        sd = math.sqrt(s2 / (1.0 + s2))
        # h restricted to sign * h >= 0; write h = m + sd * Z
        if self.sign == 1:
            mu_std = _upper_truncated_std_moments(-m / sd, order)
        else:
            mu_std = _upper_truncated_std_moments(m / sd, order)
            mu_std = mu_std * np.array([(-1.0) ** i for i in range(order + 1)]).reshape((-1,) + (1,) * c.ndim)
        scaled = np.empty((order + 1,) + c.shape)
        for r in range(order + 1):
            coeffs = _binom_row(r)
            scaled[r] = sum(coeffs[i] * m ** (r - i) * sd**i * mu_std[i] for i in range(r + 1))
        return log_scale, scaled

    def survival(self, c):
        omega = math.sqrt(1.0 + self.sigma**2)
        x = np.asarray(c, dtype=float) / omega
        return special.ndtr(-x) + 2.0 * special.owens_t(x, self.sign * self.sigma)

    def reflected(self):
        return HalfNormal(self.sigma, -self.sign)

    def sample(self, rng, size):
        return self.sign * self.sigma * np.abs(rng.standard_normal(size))

    def to_dict(self):
        return {"kind": self.kind, "sigma": self.sigma, "sign": self.sign}


@dataclass(frozen=True)
class FiniteMixture(EffectDistribution):
    weights: tuple
    components: tuple
    kind = "finite_mixture"

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if len(w) != len(self.components) or len(w) == 0:
            raise ValueError("weights and components must be non-empty and aligned")
        if np.any(w < 0) or abs(w.sum() - 1.0) > _WEIGHT_TOL:
            raise ValueError(f"mixture weights must be nonnegative and sum to 1, got {w.sum()!r}")
        object.__setattr__(self, "weights", tuple(float(x) for x in w))
        object.__setattr__(self, "components", tuple(self.components))

    @property
    def nonnegative(self) -> bool:
        return all(comp.nonnegative for w, comp in zip(self.weights, self.components) if w > 0)

    def _active(self):
        return [(w, comp) for w, comp in zip(self.weights, self.components) if w > 0]

    def tilted_moments(self, c, order):
        active = self._active()
        parts = [comp.tilted_moments(c, order) for _, comp in active]
        return _combine_log_scaled([math.log(w) for w, _ in active], parts)

    def survival(self, c):
        return sum(w * comp.survival(c) for w, comp in self._active())

    def reflected(self):
        return FiniteMixture(self.weights, tuple(comp.reflected() for comp in self.components))

    def sample(self, rng, size):
        idx = rng.choice(len(self.weights), size=size, p=self.weights)
        out = np.empty(size, dtype=float)
        for i, comp in enumerate(self.components):
            mask = idx == i
            if mask.any():
                out[mask] = comp.sample(rng, int(mask.sum()))
        return out

    def to_dict(self):
        return {
            "kind": self.kind,
            "weights": list(self.weights),
            "components": [comp.to_dict() for comp in self.components],
        }


class Discrete(FiniteMixture):
    """Finitely many atoms with given probabilities."""

    kind = "discrete"

    def __init__(self, atoms: Sequence[float], weights: Sequence[float]):
        atoms = tuple(float(a) for a in atoms)
        super().__init__(tuple(weights), tuple(PointMass(a) for a in atoms))
        object.__setattr__(self, "atoms", atoms)

    def reflected(self):
        return Discrete([-a for a in self.atoms], self.weights)

    def to_dict(self):
        return {"kind": self.kind, "atoms": list(self.atoms), "weights": list(self.weights)}


@dataclass(frozen=True)
class ContinuousEffect(EffectDistribution):
    """Arbitrary density on ``[lower, upper]``; integrals by adaptive quadrature.

    ``pdf`` must be vectorised and integrate to one over its support.
    """

    pdf: Callable[[np.ndarray], np.ndarray]
    lower: float = -math.inf
    upper: float = math.inf
    epsrel: float = 1e-11
    name: str = field(default="continuous", compare=False)
    kind = "continuous"

    @property
    def nonnegative(self) -> bool:
        return self.lower >= 0.0

    def _quad(self, fn):
        val, err = integrate.quad_vec(fn, self.lower, self.upper, epsabs=0.0, epsrel=self.epsrel, limit=400)
        if not np.all(err <= 1e-6 * np.abs(val) + 1e-12):
            raise ArithmeticError(f"quadrature did not converge (estimated error {np.max(err):.3g})")
        return val

    def tilted_moments(self, c, order):
        shape = np.shape(c)
        c = np.atleast_1d(np.asarray(c, dtype=float))
        log_scale = 0.5 * c * c
        powers = np.arange(order + 1).reshape(-1, 1)

        def fn(h):
            return np.exp(-0.5 * (h - c) ** 2) * float(self.pdf(np.array([h]))[0]) * h**powers

        return log_scale.reshape(shape), self._quad(fn).reshape((order + 1,) + shape)

    def survival(self, c):
        shape = np.shape(c)
        c = np.atleast_1d(np.asarray(c, dtype=float))
        return self._quad(lambda h: special.ndtr(h - c) * float(self.pdf(np.array([h]))[0])).reshape(shape)

    def reflected(self):
        pdf = self.pdf
        return ContinuousEffect(lambda h: pdf(-np.asarray(h)), -self.upper, -self.lower, self.epsrel, self.name)

    def sample(self, rng, size):
        # numerical inversion; the sampler is rebuilt per call because it holds the generator
        pdf = self.pdf

        class _Dist:
            def pdf(self, x):
                return float(pdf(np.array([x]))[0])

        lo = self.lower if math.isfinite(self.lower) else -np.inf
        hi = self.upper if math.isfinite(self.upper) else np.inf
        gen = sampling.NumericalInversePolynomial(_Dist(), domain=(lo, hi), u_resolution=1e-12, random_state=rng)
        return np.asarray(gen.rvs(size), dtype=float)

    def to_dict(self):
        return {"kind": self.kind, "name": self.name, "lower": self.lower, "upper": self.upper}


def effect_from_dict(d: dict) -> EffectDistribution:
    """Inverse of ``to_dict`` for the parametric kinds (used by study configs)."""
    kind = d["kind"]
    if kind == "point_mass":
        return PointMass(float(d["h"]))
    if kind == "normal":
        return Normal(float(d["mu"]), float(d["sigma"]))
    if kind == "half_normal":
        return HalfNormal(float(d["sigma"]), int(d.get("sign", 1)))
    if kind == "discrete":
        return Discrete(d["atoms"], d["weights"])
    if kind == "finite_mixture":
        return FiniteMixture(tuple(d["weights"]), tuple(effect_from_dict(c) for c in d["components"]))
    raise ValueError(f"unknown effect distribution kind {kind!r}")
