"""Sampling p-values with and without p-hacking, and Monte Carlo studies.

Under the null a study draws a true effect ``h ~ Pi`` and a statistic
``T = h + Z``; its p-value is ``1 - Phi(T)`` (one-sided) or
``2 (1 - Phi(|T|))`` (two-sided). Under specification search the researcher
runs ``M`` analyses and reports the smallest p-value, which turns the null
p-curve ``g`` into ``M (1 - G)^(M-1) g``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import special

from .effects import effect_from_dict
from .estimators import PValueSample
from .lcm import DEFAULT_TABLE, brownian_bridge_sup_draws, load_or_create_table
from .nullmodel import PCurveSpec, TestFamily, pcurve_cdf, pcurve_density
from .stattests import ALL_TESTS, BatteryConfig, run_battery

__all__ = [
    "HackingModel",
    "McStudy",
    "draw_pvalues",
    "hacked_pcurve",
    "hacked_pcurve_cdf",
    "run_mc_study",
    "brownian_bridge_sup_draws",
    "study_from_dict",
    "rates_to_csv",
    "LEVELS",
]

LEVELS = (0.01, 0.05, 0.10)
_TINY = np.finfo(float).tiny


@dataclass(frozen=True)
class HackingModel:
    """``none`` or ``spec_search`` with ``M`` analyses per reported result.

    ``shared_effect=False`` (default) draws an independent effect for each of
    the ``M`` analyses; ``True`` keeps one effect and redraws only the noise.
    """

    kind: str = "none"
    M: int = 1
    shared_effect: bool = False

    def __post_init__(self):
        if self.kind not in ("none", "spec_search"):
            raise ValueError(f"unknown hacking model {self.kind!r}")
        if self.kind == "spec_search" and self.M < 2:
            raise ValueError("specification search needs M >= 2")
        if self.kind == "none" and self.M != 1:
            object.__setattr__(self, "M", 1)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "M": self.M, "shared_effect": self.shared_effect}


def _pvalues_from_stats(family: TestFamily, t):
    if family is TestFamily.ONE_SIDED:
        p = special.ndtr(-t)
    else:
        p = 2.0 * special.ndtr(-np.abs(t))
    return np.maximum(p, _TINY)


def draw_pvalues(spec: PCurveSpec, hacking: HackingModel, n: int, seed) -> PValueSample:
    """Draw ``n`` reported p-values (the spec's interval is not applied)."""
    if n < 1:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(seed)
    M = hacking.M if hacking.kind == "spec_search" else 1
    if M > 1 and hacking.shared_effect:
        h = spec.effects.sample(rng, n)[:, None]
    else:
        h = spec.effects.sample(rng, n * M).reshape(n, M)
    t = h + rng.standard_normal((n, M))
    p = _pvalues_from_stats(spec.family, t).min(axis=1)
    return PValueSample(p)


def hacked_pcurve(spec: PCurveSpec, M: int, p):
    """p-curve of the minimum of ``M`` independent p-values: ``M (1 - G)^(M-1) g``."""
    if M < 1:
        raise ValueError("M must be >= 1")
    g = pcurve_density(spec, p)
    if M == 1:
        return g
    G = pcurve_cdf(spec, p)
    return M * np.power(1.0 - G, M - 1) * g


def hacked_pcurve_cdf(spec: PCurveSpec, M: int, p):
    """CDF of the minimum of ``M`` independent p-values: ``1 - (1 - G)^M``."""
    return 1.0 - np.power(1.0 - pcurve_cdf(spec, p), M)


@dataclass(frozen=True)
class McStudy:
    """A size or power study: sampling design, tests and master seed."""

    spec: PCurveSpec
    hacking: HackingModel = HackingModel()
    n: int = 1000
    R: int = 500
    tests: tuple = ALL_TESTS
    seed: int = 0
    battery: BatteryConfig = field(default_factory=BatteryConfig)
    levels: tuple = LEVELS
    n_jobs: int = 1
    lcm_table: Optional[dict] = None  # {"m", "R", "seed"}; default table when None

    def __post_init__(self):
        if self.R < 1:
            raise ValueError("need at least one replication")
        if self.n < 1:
            raise ValueError("n must be positive")
        object.__setattr__(self, "tests", tuple(self.tests))

    def to_dict(self) -> dict:
        return {
            "family": self.spec.family.value,
            "effects": self.spec.effects.to_dict(),
            "hacking": self.hacking.to_dict(),
            "n": self.n,
            "R": self.R,
            "tests": list(self.tests),
            "seed": self.seed,
            "battery": self.battery.to_dict(),
            "levels": list(self.levels),
            "n_jobs": self.n_jobs,
            "lcm_table": self.lcm_table,
        }


def study_from_dict(d: dict) -> McStudy:
    """Build a study from its JSON form (see README for the schema)."""
    d = dict(d)
    family = TestFamily.parse(d.pop("family"))
    effects = effect_from_dict(d.pop("effects"))
    hacking = HackingModel(**d.pop("hacking", {}))
    battery = d.pop("battery", {})
    if "tests" in battery:
        battery["tests"] = tuple(battery["tests"])
    if "binomial_window" in battery:
        battery["binomial_window"] = tuple(battery["binomial_window"])
    battery.setdefault("family", family.value)
    tests = tuple(d.pop("tests", battery.get("tests", ALL_TESTS)))
    battery["tests"] = tests
    levels = tuple(d.pop("levels", LEVELS))
    known = {"n", "R", "seed", "n_jobs", "lcm_table"}
    extra = set(d) - known
    if extra:
        raise ValueError(f"unknown study fields {sorted(extra)}")
    return McStudy(
        PCurveSpec(family, effects),
        hacking,
        tests=tests,
        battery=BatteryConfig(**battery),
        levels=levels,
        **d,
    )


def _one_replication(study: McStudy, seed_seq, table):
    s_draw, s_battery = seed_seq.spawn(2)
    sample = draw_pvalues(study.spec, study.hacking, study.n, s_draw)
    cfg = study.battery
    # per-replication seed for de-rounding/subsampling, derived from the stream
    cfg = BatteryConfig(**{**cfg.__dict__, "tests": study.tests, "seed": int(s_battery.generate_state(1)[0])})
    results, errors = run_battery(sample, cfg, lcm_table=table)
    return {r.test: r.p_value for r in results}, [e["test"] for e in errors]


def run_mc_study(study: McStudy) -> list[dict]:
    """Rejection rates per test and level with Monte Carlo standard errors.

    Replication ``r`` uses the ``r``-th child of ``SeedSequence(seed)``, so the
    output does not depend on ``n_jobs``. A replication in which a test cannot
    be computed counts as a failure for that test and is left out of its rate.
    """
    table = None
    if "lcm" in study.tests:
        cfg = study.lcm_table or DEFAULT_TABLE
        table, _ = load_or_create_table(cfg["m"], cfg["R"], cfg["seed"])
    children = np.random.SeedSequence(study.seed).spawn(study.R)
    if study.n_jobs == 1:
        outs = [_one_replication(study, c, table) for c in children]
    else:
        from joblib import Parallel, delayed

        outs = Parallel(n_jobs=study.n_jobs)(delayed(_one_replication)(study, c, table) for c in children)
    rows = []
    for test in study.tests:
        pvals = np.array([o[0][test] for o in outs if test in o[0]])
        failures = sum(test in o[1] for o in outs)
        for level in study.levels:
            ok = pvals.size
            rate = float(np.mean(pvals < level)) if ok else float("nan")
            se = math.sqrt(rate * (1.0 - rate) / ok) if ok else float("nan")
            rows.append(
                {"test": test, "level": level, "rate": rate, "mc_se": se, "R": ok, "n": study.n, "failures": failures}
            )
    return rows


def rates_to_csv(rows: Sequence[dict]) -> str:
    """CSV text with columns test, level, rate, mc_se, R, n, failures."""
    buf = io.StringIO()
    cols = ["test", "level", "rate", "mc_se", "R", "n", "failures"]
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(float(r[k])) if k in ("level", "rate", "mc_se") else r[k]) for k in cols})
    return buf.getvalue()
