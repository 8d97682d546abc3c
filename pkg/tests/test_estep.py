import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_data, random_grid, random_params
from oracles import ab_quadrature, central_gradient, rel_err
from pchazard.estep import (
    DegenerateIntervalError,
    _phi,
    cure_weight,
    e_step,
    exact_stats,
    interval_stats,
    q_value,
)
from pchazard.inference import observed_loglik, observed_score_hessian
from pchazard.model import (
    CutGrid,
    IntervalObservation,
    ModelError,
    ModelParams,
    ScalarCure,
    SurvivalData,
)
from pchazard.mstep import q_score_hessian


def test_whole_line_single_piece():
    A, B = interval_stats(IntervalObservation(0.0, math.inf), ModelParams([0.0]), CutGrid([]))
    assert A == pytest.approx([1.0])
    # E[T] for a unit exponential
    assert B == pytest.approx([1.0])


def test_unit_interval_expected_time():
    """[DERIVED] E[T | 0 < T < 1] for a unit exponential is (1 - 2/e) / (1 - 1/e)."""
    A, B = interval_stats(IntervalObservation(0.0, 1.0), ModelParams([0.0]), CutGrid([]))
    assert A[0] == pytest.approx(1.0)
    assert B[0] == pytest.approx((1 - 2 / math.e) / (1 - 1 / math.e), rel=1e-14)
    assert B[0] == pytest.approx(0.418023, abs=1e-6)


def test_split_at_one():
    A, _ = interval_stats(IntervalObservation(0.0, math.inf), ModelParams([0.0, 0.0]), CutGrid([1.0]))
    assert A == pytest.approx([1 - math.exp(-1), math.exp(-1)], rel=1e-14)


@pytest.mark.parametrize("x", [0.0, 1e-12, 1e-6, 1e-3, 0.02, 0.05, 0.3, 0.4999, 0.5, 0.7, 2.0, 40.0, 800.0])
def test_phi_against_mpmath(x):
    mpmath.mp.dps = 50
    ref = 1 - (1 + mpmath.mpf(x)) * mpmath.exp(-mpmath.mpf(x))
    got = _phi(x)
    if ref == 0:
        assert got == 0
    else:
        assert abs(got - float(ref)) <= 2e-15 * float(ref) + 1e-300


def test_phi_infinity():
    assert _phi(math.inf) == 1.0


@settings(max_examples=150, deadline=None)
@given(
    cuts=st.lists(st.floats(1.0, 99.0), max_size=5, unique=True),
    a=st.lists(st.floats(-8.0, 1.0), min_size=6, max_size=6),
    lin=st.floats(-1.5, 1.5),
    left=st.floats(0.0, 80.0),
    width=st.one_of(st.floats(0.01, 120.0), st.just(math.inf)),
)
def test_ab_match_quadrature(cuts, a, lin, left, width):
    """[DERIVED] closed forms against adaptive quadrature."""
    g = CutGrid(sorted(cuts))
    p = ModelParams(a[: g.K])
    right = left + width
    from pchazard.estep import interval_block

    try:
        A, B, _, _ = interval_block([left], [right], [lin], p, g)
    except DegenerateIntervalError:
        return
    Aq, Bq = ab_quadrature(left, right, lin, p, g)
    nz = Aq > 0
    assert np.all(A[0][~nz] == 0)
    assert np.max(np.abs(A[0][nz] - Aq[nz]) / Aq[nz]) < 1e-8
    assert np.max(np.abs(B[0][nz] - Bq[nz]) / Bq[nz]) < 1e-8
    assert abs(A[0].sum() - 1) < 1e-10


def test_degenerate_interval_reports_subject():
    g = CutGrid([])
    p = ModelParams([-700.0])  # interval mass below 1e-300 relative to S(L)
    data = SurvivalData([1.0, 50.0, 60.0, 5.0], [2.0, 60.0, 70.0, np.inf])
    with pytest.raises(DegenerateIntervalError) as err:
        e_step(p, data, g)
    assert err.value.subjects == [0, 1, 2]


def test_exact_statistics():
    g = CutGrid([1.0, 2.0])
    O, R = exact_stats(IntervalObservation(1.5, 1.5), g)
    assert O.tolist() == [0, 1, 0]
    assert R == pytest.approx([1.0, 0.5, 0.0])
    # on the cut: the piece that ends there
    O, R = exact_stats(IntervalObservation(2.0, 2.0), g)
    assert O.tolist() == [0, 1, 0]
    with pytest.raises(ModelError):
        exact_stats(IntervalObservation(1.0, 2.0), g)


def test_cure_weight_formula():
    g = CutGrid([])
    p = ModelParams([0.0], cure=ScalarCure(0.7))
    w = cure_weight(IntervalObservation(2.0, math.inf), p, g)
    s = math.exp(-2.0)
    assert w == pytest.approx(0.7 * s / (0.3 + 0.7 * s), rel=1e-14)
    assert cure_weight(IntervalObservation(1.0, 2.0), p, g) == 1.0


def test_bundle_loglik_matches_observed(rng):
    """[DERIVED] the E-step's log-likelihood is the direct observed one."""
    for _ in range(10):
        data = random_data(rng)
        g = random_grid(rng)
        p = random_params(rng, g)
        assert e_step(p, data, g).loglik == pytest.approx(observed_loglik(p, data, g), rel=1e-12)


def test_cure_bundle_loglik_matches_observed(rng):
    data = random_data(rng)
    g = CutGrid([20.0])
    p = ModelParams([-3.0, -3.5], [0.2, -0.1], ScalarCure(0.8))
    assert e_step(p, data, g).loglik == pytest.approx(observed_loglik(p, data, g), rel=1e-12)


def test_q_gradient_equals_observed_score(rng):
    """[DERIVED] Fisher identity: grad Q(theta | theta) is the observed score."""
    for _ in range(10):
        data = random_data(rng)
        g = random_grid(rng)
        p = random_params(rng, g)
        bundle = e_step(p, data, g)
        gq, _ = q_score_hessian(p, bundle, g)
        score = observed_score_hessian(p, data, g).score
        assert rel_err(gq, score) < 1e-9


def test_q_value_ascent_bounds_loglik(rng):
    """[DERIVED] Q(theta|old) - Q(old|old) <= l(theta) - l(old) (EM minorization)."""
    data = random_data(rng)
    g = CutGrid([15.0, 40.0])
    old = random_params(rng, g)
    bundle = e_step(old, data, g)
    q0 = q_value(old, bundle)
    l0 = bundle.loglik
    for _ in range(20):
        new = ModelParams(old.log_hazard + rng.normal(0, 0.3, g.K), old.beta + rng.normal(0, 0.3, 2))
        assert q_value(new, bundle) - q0 <= observed_loglik(new, data, g) - l0 + 1e-9


def test_q_value_finite_difference_consistency(rng):
    data = random_data(rng)
    g = CutGrid([20.0])
    p = random_params(rng, g)
    bundle = e_step(p, data, g)
    f = lambda v: q_value(p.with_vector(v), bundle)
    gq, _ = q_score_hessian(p, bundle, g)
    assert rel_err(gq, central_gradient(f, p.vector())) < 1e-6
