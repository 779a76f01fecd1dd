import os
import sys

import numpy as np
import pytest
from scipy import stats

from phack.effects import ContinuousEffect, Discrete, FiniteMixture, HalfNormal, Normal, PointMass
from phack.nullmodel import TestFamily


def effect_corpus(family):
    """Effect distributions admissible for ``family`` (one-sided needs h >= 0)."""
    gamma = stats.gamma(a=2.0, scale=0.8)
    common = [
        ("point0", PointMass(0.0)),
        ("point1", PointMass(1.0)),
        ("point2.8", PointMass(2.8)),
        ("halfnormal1", HalfNormal(1.0)),
        ("halfnormal3", HalfNormal(3.0)),
        ("discrete", Discrete([0.0, 0.5, 2.0, 4.0], [0.4, 0.3, 0.2, 0.1])),
        ("mixture", FiniteMixture((0.7, 0.3), (PointMass(0.0), HalfNormal(2.0)))),
        ("gamma", ContinuousEffect(gamma.pdf, 0.0, 40.0, name="gamma")),
    ]
    if TestFamily.parse(family) is TestFamily.TWO_SIDED:
        common += [
            ("normal", Normal(0.5, 1.5)),
            ("negative", Discrete([-3.0, -1.0, 1.5], [0.2, 0.3, 0.5])),
        ]
    return common


FAMILIES = [TestFamily.ONE_SIDED, TestFamily.TWO_SIDED]


def corpus_params():
    return [pytest.param(f, e, id=f"{f.value}-{name}") for f in FAMILIES for name, e in effect_corpus(f)]


@pytest.fixture(scope="session", autouse=True)
def _table_cache(tmp_path_factory):
    # keep quantile tables generated by the suite out of the user's cache
    old = os.environ.get("PHACK_CACHE_DIR")
    os.environ["PHACK_CACHE_DIR"] = str(tmp_path_factory.mktemp("phack-cache"))
    yield
    if old is None:
        os.environ.pop("PHACK_CACHE_DIR", None)
    else:
        os.environ["PHACK_CACHE_DIR"] = old


@pytest.fixture(scope="session")
def lcm_table():
    from phack.lcm import DEFAULT_TABLE, load_or_create_table

    return load_or_create_table(**DEFAULT_TABLE)[0]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    module = next((m for name, m in sys.modules.items() if name.endswith("test_acceptance")), None)
    lines = module.summary_lines() if module is not None else []
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
