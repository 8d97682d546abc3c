"""Acceptance checks.

Each test prints one ``ACCEPTANCE <i> PASS|FAIL`` line with the measured
quantities, then asserts.  Items 4 and 11 read the session audit kept in
``conftest.py`` (every fit and every LR interval built by the suite), which is
why pytest orders this module last.

Run the whole suite (``pytest``) for the full audit, or this file alone with
``python tests/test_acceptance.py``.
"""

import math
import sys
import time

import numpy as np
import pytest

from conftest import AUDIT, random_data, random_grid, random_params
from oracles import ab_quadrature, central_gradient, central_jacobian, rel_err
from pchazard.estep import DegenerateIntervalError, e_step, interval_block, q_value
from pchazard.inference import lr_interval, observed_loglik, observed_score_hessian
from pchazard.model import CutGrid, LogisticCure, ModelParams, ScalarCure, SurvivalData
from pchazard.mstep import FitConfig, StructuredHessian, band_ldl_solve, em_fit, newton_step_schur, q_score_hessian
from pchazard.ridge import PenaltyState, penalized_score_hessian, penalty
from pchazard.simulation import (
    BETA_TRUE,
    M1_RATES,
    ScenarioSpec,
    StudyConfig,
    gen_scenario,
    run_study,
    true_grid,
)

SEED = 0


def verdict(capsys, item, ok, detail):
    with capsys.disabled():
        print(f"\nACCEPTANCE {item:>2} {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, detail


# 1 -------------------------------------------------------------------------


def test_item01_estep_quadrature(capsys):
    rng = np.random.default_rng(101)
    start = time.perf_counter()
    worst_a = worst_b = worst_sum = 0.0
    done = skipped = 0
    while done < 1000:
        g = CutGrid(np.sort(rng.choice(np.arange(2.0, 100.0, 0.5), int(rng.integers(0, 8)), replace=False)))
        p = ModelParams(rng.uniform(-8.0, 1.0, g.K))
        lin = float(rng.uniform(-1.5, 1.5))
        kind = rng.integers(3)
        left = 0.0 if kind == 0 else float(rng.uniform(0, 90))
        right = math.inf if kind == 2 else left + float(rng.uniform(0.01, 100))
        try:
            A, B, _, _ = interval_block([left], [right], [lin], p, g)
        except DegenerateIntervalError:
            skipped += 1
            continue
        Aq, Bq = ab_quadrature(left, right, lin, p, g)
        nz = Aq > 0
        if np.any(A[0][~nz] != 0):
            worst_a = math.inf
        worst_a = max(worst_a, float(np.max(np.abs(A[0][nz] - Aq[nz]) / Aq[nz])))
        worst_b = max(worst_b, float(np.max(np.abs(B[0][nz] - Bq[nz]) / Bq[nz])))
        worst_sum = max(worst_sum, abs(A[0].sum() - 1.0))
        done += 1
    elapsed = time.perf_counter() - start
    ok = worst_a < 1e-8 and worst_b < 1e-8 and worst_sum < 1e-10 and elapsed < 60
    verdict(
        capsys,
        1,
        ok,
        f"{done} instances ({skipped} degenerate redrawn): max rel err A {worst_a:.2e}, B {worst_b:.2e}; "
        f"max |sum A - 1| {worst_sum:.2e}; {elapsed:.1f}s",
    )


# 2 -------------------------------------------------------------------------


def _cure_instance(rng, data, kind):
    if kind == 1:
        return data, ScalarCure(float(rng.uniform(0.3, 0.95)))
    if kind == 2:
        x = np.column_stack([np.ones(data.n), rng.normal(size=data.n)])
        return SurvivalData(data.left, data.right, data.z, x), LogisticCure(rng.normal(0.5, 0.5, 2))
    return data, None


def test_item02_derivatives(capsys):
    rng = np.random.default_rng(202)
    start = time.perf_counter()
    worst = {"Q grad": 0.0, "Q hess": 0.0, "pen grad": 0.0, "pen hess": 0.0, "obs score": 0.0, "obs hess": 0.0}
    for i in range(200):
        data = random_data(rng)
        g = random_grid(rng)
        data, cure = _cure_instance(rng, data, i % 3)
        old = random_params(rng, g)
        old = ModelParams(old.log_hazard, old.beta, cure)
        bundle = e_step(old, data, g)
        th = old.with_vector(old.vector() + np.concatenate([rng.normal(0, 0.05, g.K + 2), np.zeros(old.n_free() - g.K - 2)]))
        f = lambda v: q_value(th.with_vector(v), bundle)
        grad, H = q_score_hessian(th, bundle, g)
        worst["Q grad"] = max(worst["Q grad"], rel_err(grad, central_gradient(f, th.vector(), 1e-6)))
        jac = central_jacobian(lambda v: q_score_hessian(th.with_vector(v), bundle, g)[0], th.vector(), 1e-6)
        worst["Q hess"] = max(worst["Q hess"], rel_err(H.to_dense(), jac))

    for _ in range(200):
        data = random_data(rng)
        g = CutGrid(np.sort(rng.choice(np.arange(5.0, 85.0, 2.5), int(rng.integers(1, 6)), replace=False)))
        p = random_params(rng, g)
        b = e_step(p, data, g)
        state = PenaltyState(float(rng.uniform(0.1, 100)), rng.uniform(0.1, 10, g.K - 1))
        f = lambda v: q_value(p.with_vector(v), b) - penalty(v[: g.K], state)
        grad, H = penalized_score_hessian(p, b, g, state)
        worst["pen grad"] = max(worst["pen grad"], rel_err(grad, central_gradient(f, p.vector(), 1e-6)))
        jac = central_jacobian(lambda v: penalized_score_hessian(p.with_vector(v), b, g, state)[0], p.vector(), 1e-6)
        worst["pen hess"] = max(worst["pen hess"], rel_err(H.to_dense(), jac))

    for _ in range(200):
        data = random_data(rng)
        g = random_grid(rng)
        p = random_params(rng, g)
        obs = observed_score_hessian(p, data, g)
        f = lambda v: observed_loglik(p.with_vector(v), data, g)
        worst["obs score"] = max(worst["obs score"], rel_err(obs.score, central_gradient(f, p.vector(), 1e-6)))
        jac = central_jacobian(lambda v: observed_score_hessian(p.with_vector(v), data, g).score, p.vector(), 1e-6)
        worst["obs hess"] = max(worst["obs hess"], rel_err(obs.hessian, jac))
    elapsed = time.perf_counter() - start
    ok = all(worst[k] < 1e-6 for k in ("Q grad", "pen grad", "obs score"))
    ok &= all(worst[k] < 1e-5 for k in ("Q hess", "pen hess", "obs hess"))
    ok &= elapsed < 120
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    verdict(capsys, 2, ok, f"3 x 200 instances, max rel err: {detail}; {elapsed:.1f}s")


# 3 -------------------------------------------------------------------------


def test_item03_linear_algebra(capsys):
    rng = np.random.default_rng(303)
    worst_ldl = worst_schur = 0.0
    sizes = [(K, d) for K in (1, 2, 3, 10, 50, 100, 200) for d in range(6)]
    for K, d in sizes:
        for _ in range(3):
            off = rng.normal(0, 1, K - 1)
            diag = np.abs(rng.normal(0, 1, K)) + 0.1
            diag[:-1] += np.abs(off)
            diag[1:] += np.abs(off)
            M = np.diag(diag) + np.diag(off, 1) + np.diag(off, -1)
            rhs = rng.normal(size=K)
            ref = np.linalg.solve(M, rhs)
            x = band_ldl_solve(diag, off, rhs)
            worst_ldl = max(worst_ldl, float(np.max(np.abs(x - ref)) / np.max(np.abs(ref))))
            cross = rng.normal(0, 0.3, (K, d))
            G = rng.normal(size=(d, d))
            C = cross.T @ np.linalg.solve(M, cross) + G @ G.T + 0.5 * np.eye(d)
            H = StructuredHessian(-diag, -off, -cross, -C)
            gvec = rng.normal(size=K + d)
            ref = np.linalg.solve(-H.to_dense(), gvec)
            x = newton_step_schur(gvec, H)
            worst_schur = max(worst_schur, float(np.max(np.abs(x - ref)) / np.max(np.abs(ref))))
    ok = worst_ldl <= 1e-9 and worst_schur <= 1e-9
    verdict(
        capsys,
        3,
        ok,
        f"{3 * len(sizes)} systems, K <= 200, d <= 5: max rel err LDL {worst_ldl:.1e}, Schur {worst_schur:.1e}",
    )


# 5 -------------------------------------------------------------------------


def test_item05_consistency_at_scale(capsys):
    start = time.perf_counter()
    data = gen_scenario(ScenarioSpec("M1", "S1", 10_000, SEED))
    fit = em_fit(data, true_grid())
    elapsed = time.perf_counter() - start
    db = fit.params.beta - BETA_TRUE
    da = fit.params.log_hazard - np.log(M1_RATES)
    ok = abs(db[0]) < 0.05 and abs(db[1]) < 0.05 and np.max(np.abs(da)) < 0.1 and elapsed < 60
    verdict(
        capsys,
        5,
        ok,
        f"seed {SEED}: beta err ({db[0]:+.4f}, {db[1]:+.4f}), a err "
        f"({', '.join(f'{v:+.3f}' for v in da)}), max |a err| {np.max(np.abs(da)):.3f}; {elapsed:.1f}s",
    )


# Monte Carlo studies (items 6-10) ----------------------------------------


@pytest.fixture(scope="module")
def m1_study():
    start = time.perf_counter()
    reports = run_study(ScenarioSpec("M1", "S1", 400, SEED), 100, ["adaptive_ridge", "midpoint"], StudyConfig())
    return reports, time.perf_counter() - start


def test_item06_table1(capsys, m1_study):
    reports, elapsed = m1_study
    r = reports["adaptive_ridge"]
    ok = abs(r.bias[0] - 0.0116) <= 0.04 and abs(r.bias[1] - (-0.0137)) <= 0.03
    ok &= bool(np.all((r.cp >= 0.88) & (r.cp <= 0.99)))
    verdict(
        capsys,
        6,
        ok,
        f"M={r.M} (failed {r.n_failed}): bias ({r.bias[0]:+.4f}, {r.bias[1]:+.4f}), "
        f"se ({r.se[0]:.4f}, {r.se[1]:.4f}), cp ({r.cp[0]:.2f}, {r.cp[1]:.2f}); study {elapsed / 60:.1f} min",
    )


def test_item07_table2(capsys, m1_study):
    reports, _ = m1_study
    ar, mid = reports["adaptive_ridge"], reports["midpoint"]
    ok = ar.ibias2 < 0.01 and ar.mise < mid.mise
    verdict(
        capsys,
        7,
        ok,
        f"IBias2 {ar.ibias2:.5f}, IVar {ar.ivar:.5f}, MISE adaptive ridge {ar.mise:.5f} vs midpoint {mid.mise:.5f}",
    )


def test_item08_cut_detection(capsys, m1_study):
    reports, _ = m1_study
    r = reports["adaptive_ridge"]
    mode = r.modal_cut_count()
    frac = r.fraction_with_cut((35.0, 55.0))
    ok = mode in (1, 2) and frac >= 0.80
    counts = {k: round(v / r.M, 2) for k, v in sorted(r.cut_counts.items())}
    verdict(capsys, 8, ok, f"modal cut count {mode} (distribution {counts}); P(>=1 cut in [35,55]) {frac:.2f}")


@pytest.fixture(scope="module")
def midpoint_1000():
    cfg = StudyConfig(compute_ci=False)
    return run_study(ScenarioSpec("M1", "S1", 1000, SEED), 100, ["midpoint"], cfg)["midpoint"]


def test_item09_midpoint_bias(capsys, m1_study, midpoint_1000):
    b400 = m1_study[0]["midpoint"].bias[0]
    b1000 = midpoint_1000.bias[0]
    ok = b400 <= -0.10 and b1000 <= -0.10
    verdict(capsys, 9, ok, f"midpoint bias(beta_1): n=400 {b400:+.4f}, n=1000 {b1000:+.4f}")


def test_item10_cure(capsys):
    start = time.perf_counter()
    cfg = StudyConfig(compute_ci=False, cure="scalar")
    full = run_study(ScenarioSpec("M1", "S1", 400, SEED), 50, ["adaptive_ridge"], cfg)["adaptive_ridge"]
    cured = run_study(ScenarioSpec("M1", "S1", 400, SEED, cure_p=0.7), 50, ["adaptive_ridge"], cfg)["adaptive_ridge"]
    p_full = np.array([r.cure[0] for r in full.replicates])
    p_cured = np.array([r.cure[0] for r in cured.replicates])
    spec_frac = float(np.mean(p_full > 0.95))
    sens_mean = float(p_cured.mean())
    ok = spec_frac >= 0.90 and abs(sens_mean - 0.712) <= 0.05
    verdict(
        capsys,
        10,
        ok,
        f"fully susceptible: p_hat > 0.95 in {spec_frac:.0%} of {p_full.size} (min {p_full.min():.3f}); "
        f"true p=0.7: mean p_hat {sens_mean:.3f} over {p_cured.size}; {(time.perf_counter() - start) / 60:.1f} min",
    )


# 4 and 11 read the audit, so they come last --------------------------------


def test_item04_em_ascent(capsys):
    rng = np.random.default_rng(404)
    t = rng.exponential(25.0, 300)
    c = rng.uniform(0, 80, 300)
    v1 = rng.uniform(0, 40, 300)
    left = np.where(t < v1, 0.0, np.where(t <= c, t, np.maximum(c, v1)))
    right = np.where(t < v1, v1, np.where(t <= c, t, np.inf))
    data = SurvivalData(left, right)
    g = CutGrid([10.0, 25.0, 45.0, 70.0])
    cfg = dict(tol=1e-12, max_em_iter=5000, gem=False)
    newton = em_fit(data, g, FitConfig(m_step="newton", max_newton_per_m=100, **cfg))
    closed = em_fit(data, g, FitConfig(m_step="closed", **cfg))
    gap = float(np.max(np.abs(newton.params.log_hazard - closed.params.log_hazard)))
    n_bad = len(AUDIT.trace_violations)
    ok = n_bad == 0 and AUDIT.fits > 0 and gap < 1e-8
    verdict(
        capsys,
        4,
        ok,
        f"{AUDIT.fits} fits audited, {n_bad} with a trace drop > 1e-10 (largest drop {max(AUDIT.worst_drop, 0):.1e}); "
        f"d_Z=0 Newton vs closed form max |diff| {gap:.1e}",
    )


def test_item11_lr_intervals(capsys):
    errs = []
    for s in (0.05, 1.0, 3.0):
        est = -0.4
        iv = lr_interval(lambda v: -((v - est) ** 2) / (2 * s * s), est, 0.0, 0.05)
        errs += [abs(iv.lower - (est - 1.959964 * s)), abs(iv.upper - (est + 1.959964 * s))]
    toy = max(errs)
    bad = [iv for iv in AUDIT.intervals if not (iv.lower <= iv.estimate <= iv.upper)]
    ok = toy <= 1e-6 and not bad and len(AUDIT.intervals) > 0
    verdict(
        capsys,
        11,
        ok,
        f"Gaussian toy max endpoint error {toy:.1e}; {len(AUDIT.intervals)} LR intervals audited, "
        f"{len(bad)} not containing the estimate",
    )


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-p", "no:cacheprovider"]))
