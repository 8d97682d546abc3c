"""Shared fixtures and a session-wide audit of fits and LR intervals.

Every ``em_fit`` call made anywhere in the suite is wrapped so its trace can
be checked for ascent, and every likelihood-ratio interval is recorded so the
acceptance tests can verify that each one contains its estimate.
"""

import functools

import numpy as np
import pytest

import pchazard
from pchazard import cli, inference, mstep, ridge, simulation
from pchazard.model import CutGrid, ModelParams, SurvivalData

TRACE_SLACK = 1e-10


class Audit:
    def __init__(self):
        self.fits = 0
        self.trace_violations = []
        self.intervals = []
        self.worst_drop = 0.0

    @staticmethod
    def trace_ok(trace) -> bool:
        t = np.asarray(trace, dtype=float)
        if t.size < 2:
            return True
        return bool(np.all(np.diff(t) >= -TRACE_SLACK))


AUDIT = Audit()


def _wrap_fit(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        res = fn(*args, **kwargs)
        AUDIT.fits += 1
        if len(res.trace) > 1:
            AUDIT.worst_drop = max(AUDIT.worst_drop, float(-np.min(np.diff(res.trace))))
        if not Audit.trace_ok(res.trace):
            AUDIT.trace_violations.append(np.asarray(res.trace))
        return res

    return wrapper


def _wrap_interval(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        res = fn(*args, **kwargs)
        AUDIT.intervals.append(res)
        return res

    return wrapper


_orig_fit = mstep.em_fit
_orig_interval = inference.lr_interval
for _mod in (mstep, ridge, inference, simulation, cli, pchazard):
    if hasattr(_mod, "em_fit"):
        _mod.em_fit = _wrap_fit(_orig_fit)
inference.lr_interval = _wrap_interval(_orig_interval)


def pytest_collection_modifyitems(config, items):
    # acceptance checks read the session audit, so they run last
    items.sort(key=lambda it: it.nodeid.startswith("tests/test_acceptance.py"))


@pytest.fixture(scope="session")
def audit():
    return AUDIT


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_data(rng, n=40, d=2, exact_frac=0.2, horizon=60.0):
    """Mixed-class data set (left, interval, right, exact) with covariates."""
    t = rng.exponential(30.0, n)
    v1 = rng.uniform(0, horizon, n)
    v2 = v1 + rng.uniform(1.0, 2 * horizon, n)
    left = np.where(t < v1, 0.0, np.where(t > v2, v2, v1))
    right = np.where(t < v1, v1, np.where(t > v2, np.inf, v2))
    exact = rng.uniform(size=n) < exact_frac
    left = np.where(exact, t, left)
    right = np.where(exact, t, right)
    z = rng.normal(size=(n, d))
    return SurvivalData(left, right, z)


def random_params(rng, grid: CutGrid, d=2):
    return ModelParams(rng.normal(-3.5, 0.6, grid.K), rng.normal(0, 0.4, d))


def random_grid(rng, kmax=5, lo=5.0, hi=90.0):
    k = int(rng.integers(0, kmax))
    return CutGrid(np.sort(rng.choice(np.arange(lo, hi, 2.5), size=k, replace=False)))
