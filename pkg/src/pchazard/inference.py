"""Observed-data likelihood, its derivatives, and likelihood-based inference.

For a non-exact subject the contribution is

    l_i = -Lambda(L) + log(1 - exp(-(Lambda(R) - Lambda(L)))),

and for an exact one ``a_k + beta z - Lambda(T)``.  Since every cumulative
hazard is ``exp(beta z) sum_k exp(a_k) x_k`` with fixed exposures ``x``, the
gradient and Hessian follow from the chain rule through ``Lambda`` alone.
Cut points are treated as fixed throughout.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy import stats

from .model import (
    CensorClass,
    CutGrid,
    FitDivergence,
    ModelError,
    ModelParams,
    SurvivalData,
    susceptible_probability,
    survival,
)
from .mstep import FitConfig, FitResult, em_fit

log = logging.getLogger(__name__)


class SingularHessianError(np.linalg.LinAlgError):
    def __init__(self, block: str):
        self.block = block
        super().__init__(f"observed information is singular in the {block} block")


@dataclass
class ObservedModelFunctions:
    loglik: float
    score: np.ndarray
    hessian: np.ndarray


@dataclass
class _Design:
    """Exposure matrices at L and R (or T) for every subject."""

    xl: np.ndarray
    xd: np.ndarray  # x(R) - x(L); zero on right-censored and exact rows
    onehot: np.ndarray  # piece of T on exact rows
    exact: np.ndarray
    right: np.ndarray


def _design(data: SurvivalData, grid: CutGrid) -> _Design:
    exact = data.exact
    right = data.censor_class == CensorClass.RIGHT
    xl = grid.exposure(data.left)
    xr = grid.exposure(np.where(right | exact, data.left, data.right))
    onehot = np.zeros((data.n, grid.K))
    if np.any(exact):
        onehot[np.flatnonzero(exact), grid.piece_index(data.left[exact])] = 1.0
    return _Design(xl, xr - xl, onehot, exact, right)


def _terms(params: ModelParams, data: SurvivalData, design: _Design):
    """Per-subject log-likelihood of the susceptibles (no cure weighting)."""
    if np.max(params.log_hazard) > 700:
        raise FitDivergence("log hazard overflow")
    lin = data.z @ params.beta if data.d_z else np.zeros(data.n)
    scale = np.exp(lin)
    rates = np.exp(params.log_hazard)
    lam_l = scale * (design.xl @ rates)
    delta = scale * (design.xd @ rates)
    with np.errstate(divide="ignore"):
        mass = np.log(-np.expm1(-delta))
    ll = -lam_l + np.where(design.right, 0.0, mass)
    ll = np.where(design.exact, design.onehot @ params.log_hazard + lin - lam_l, ll)
    return ll, lam_l


def observed_loglik(
    theta: ModelParams, data: SurvivalData, grid: CutGrid, design: Optional[_Design] = None
) -> float:
    """Observed-data log-likelihood; ``-inf`` when some interval has zero probability.

    With a cure component, right-censored subjects contribute
    ``log(1 - p + p S(L))`` and the others ``log p`` plus their usual term.
    """
    theta.check(grid, data.d_z)
    design = design or _design(data, grid)
    ll, lam_l = _terms(theta, data, design)
    if theta.cure is not None:
        p = susceptible_probability(theta, data.x, data.n)
        with np.errstate(divide="ignore"):
            ll = np.where(design.right, np.log(1.0 - p + p * np.exp(-lam_l)), np.log(p) + ll)
    total = float(np.sum(ll))
    if math.isnan(total):
        return -math.inf
    return total


def observed_score_hessian(
    theta: ModelParams, data: SurvivalData, grid: CutGrid, design: Optional[_Design] = None
) -> ObservedModelFunctions:
    """Analytic gradient and Hessian of the observed log-likelihood in ``(a, beta)``.

    Every cumulative hazard ``Lambda = e^{lin} sum_k e^{a_k} x_k`` has
    gradient ``(u, Lambda z)`` with ``u_k = e^{lin} e^{a_k} x_k`` and Hessian
    ``[[diag(u), u z'], [z u', Lambda z z']]``.  With ``g(s) = log(1 - e^{-s})``
    the interval term ``g(Lambda_R - Lambda_L)`` contributes
    ``g' * d2 Lambda + g'' * dLambda dLambda'``.
    """
    if theta.cure is not None:
        raise ModelError("analytic observed derivatives are available without cure only")
    theta.check(grid, data.d_z)
    design = design or _design(data, grid)
    z = data.z
    lin = z @ theta.beta if data.d_z else np.zeros(data.n)
    scale = np.exp(lin)
    rates = np.exp(theta.log_hazard)
    U_l = scale[:, None] * design.xl * rates
    U_d = scale[:, None] * design.xd * rates
    lam_l = U_l.sum(axis=1)
    delta = U_d.sum(axis=1)
    interval = ~(design.right | design.exact)
    d1 = np.zeros(data.n)
    d2 = np.zeros(data.n)
    s = delta[interval]
    # expm1 overflows to inf for s > ~709; 1/inf gives the right limit 0
    with np.errstate(over="ignore"):
        em1 = np.expm1(s)
    d1[interval] = 1.0 / em1
    d2[interval] = -1.0 / (em1 * -np.expm1(-s))

    ll = observed_loglik(theta, data, grid, design)

    def jac(U, lam):
        return np.hstack([U, lam[:, None] * z])

    J_l = jac(U_l, lam_l)
    J_d = jac(U_d, delta)
    score = -J_l.sum(axis=0) + d1 @ J_d
    score[: grid.K] += design.onehot.sum(axis=0)
    if data.d_z:
        score[grid.K:] += z[design.exact].sum(axis=0)

    # sum_i c_i * d2 Lambda_i with c = -1 for Lambda(L) and g' for the difference
    def second(c_l, c_d):
        K = grid.K
        W = c_l[:, None] * U_l + c_d[:, None] * U_d
        lam = c_l * lam_l + c_d * delta
        H = np.zeros((K + data.d_z, K + data.d_z))
        H[np.arange(K), np.arange(K)] = W.sum(axis=0)
        if data.d_z:
            H[:K, K:] = W.T @ z
            H[K:, :K] = H[:K, K:].T
            H[K:, K:] = (z * lam[:, None]).T @ z
        return H

    H = second(-np.ones(data.n), d1) + (J_d * d2[:, None]).T @ J_d
    H = 0.5 * (H + H.T)
    return ObservedModelFunctions(ll, score, H)


@dataclass
class ProfileResult:
    params: ModelParams
    loglik: float
    converged: bool
    iterations: int = 0
    flags: list = field(default_factory=list)


def _free_mask(params: ModelParams, fixed: dict, pinned=None) -> np.ndarray:
    free = np.ones(params.n_free(), dtype=bool)
    for idx in fixed:
        free[idx] = False
    if pinned is not None:
        free[: params.K] &= ~np.asarray(pinned, dtype=bool)
    return free


def newton_observed(
    theta: ModelParams,
    data: SurvivalData,
    grid: CutGrid,
    free: Optional[np.ndarray] = None,
    max_iter: int = 100,
    tol: float = 1e-12,
    log_floor: float = -30.0,
) -> ProfileResult:
    """Maximize the observed log-likelihood over the ``free`` coordinates.

    Damped Newton with step halving; a Levenberg shift is added when the
    restricted information is not positive definite.  Log-hazards that drift
    below ``log_floor`` are pinned there.
    """
    design = _design(data, grid)
    vec = theta.vector()
    free = np.ones(vec.size, dtype=bool) if free is None else free.copy()
    K = grid.K
    obs = observed_score_hessian(theta, data, grid, design)
    ll = obs.loglik
    flags = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        idx = np.flatnonzero(free)
        if idx.size == 0:
            converged = True
            break
        g = obs.score[idx]
        info = -obs.hessian[np.ix_(idx, idx)]
        shift = 0.0
        while True:
            try:
                chol = np.linalg.cholesky(info + shift * np.eye(idx.size))
                break
            except np.linalg.LinAlgError:
                shift = max(1e-8 * (1 + np.max(np.abs(np.diag(info)))), 10 * shift)
        step = np.linalg.solve(chol.T, np.linalg.solve(chol, g))
        decrement = float(g @ step)
        if decrement < tol and shift == 0.0:
            converged = True
            break
        scale = 1.0
        accepted = False
        for _ in range(30):
            cand = vec.copy()
            cand[idx] += scale * step
            cand_p = theta.with_vector(cand)
            new_ll = observed_loglik(cand_p, data, grid, design)
            if new_ll >= ll and np.isfinite(new_ll):
                accepted = True
                break
            scale *= 0.5
        if not accepted:
            # no ascent direction left at machine precision
            converged = decrement < 1e-8
            if not converged:
                flags.append("line search failed")
            break
        low = free[:K] & (cand[:K] < log_floor)
        if np.any(low):
            cand[:K][low] = log_floor
            free[:K] &= ~low
            flags.append(f"pieces {np.flatnonzero(low).tolist()} pinned at log floor")
        gain = new_ll - ll
        vec, theta = cand, theta.with_vector(cand)
        obs = observed_score_hessian(theta, data, grid, design)
        ll = obs.loglik
        if 0 <= gain < 1e-13 * (1 + abs(ll)) and decrement < 1e-8:
            converged = True
            break
    return ProfileResult(theta, ll, converged, it, flags)


def profile_fit(
    data: SurvivalData,
    grid: CutGrid,
    start: ModelParams,
    fixed: Optional[dict] = None,
    pinned=None,
    config: Optional[FitConfig] = None,
) -> ProfileResult:
    """Maximize the observed likelihood with ``fixed`` coordinates held at given values.

    Without a cure part this is Newton on the analytic derivatives; with one,
    a tightly converged EM run.
    """
    fixed = dict(fixed or {})
    vec = start.vector()
    for idx, value in fixed.items():
        vec[idx] = value
    theta = start.with_vector(vec)
    if start.cure is None:
        free = _free_mask(theta, fixed, pinned)
        res = newton_observed(theta, data, grid, free)
        if res.converged:
            return res
        # fall back to EM, then polish
        em = em_fit(data, grid, config, init=theta, fixed=fixed)
        res2 = newton_observed(em.params, data, grid, _free_mask(theta, fixed, em.pinned))
        best = res2 if res2.loglik >= res.loglik else res
        best.flags.append("EM fallback")
        return best
    cfg = config or FitConfig(tol=1e-11, max_em_iter=5000)
    em = em_fit(data, grid, cfg, init=theta, fixed=fixed)
    return ProfileResult(em.params, em.obs_loglik, em.converged, em.n_em_iters, list(em.flags))


def polish(fit: FitResult, data: SurvivalData) -> FitResult:
    """Refine an EM fit to the exact observed-likelihood maximum (no cure only)."""
    if fit.params.cure is not None:
        return fit
    res = profile_fit(data, fit.grid, fit.params, pinned=fit.pinned)
    if res.loglik < fit.obs_loglik:
        return fit
    return FitResult(
        params=res.params,
        grid=fit.grid,
        obs_loglik=res.loglik,
        n_em_iters=fit.n_em_iters,
        converged=fit.converged or res.converged,
        trace=fit.trace,
        pinned=fit.pinned,
        objective=res.loglik,
        flags=fit.flags + res.flags,
    )


def chi2_quantile(level: float, df: int = 1) -> float:
    if level <= 0:
        return 0.0
    return float(stats.chi2.ppf(level, df))


@dataclass
class LRTest:
    stat: float
    p_value: float
    df: int
    restricted: Optional[ProfileResult] = None
    flags: list = field(default_factory=list)


def lr_test(
    data: SurvivalData, grid: CutGrid, full_fit: FitResult, restriction: dict, config: Optional[FitConfig] = None
) -> LRTest:
    """Likelihood-ratio test of ``{component index: value}`` against the full fit."""
    if not restriction:
        raise ValueError("empty restriction")
    res = profile_fit(data, grid, full_fit.params, restriction, full_fit.pinned, config)
    stat = max(0.0, -2.0 * (res.loglik - full_fit.obs_loglik))
    df = len(restriction)
    flags = [] if res.converged else ["restricted fit did not converge"]
    return LRTest(stat, float(stats.chi2.sf(stat, df)), df, res, flags)


@dataclass
class LRInterval:
    estimate: float
    lower: float
    upper: float
    alpha: float
    flags: list = field(default_factory=list)

    @property
    def one_sided(self) -> bool:
        return any("no sign change" in f for f in self.flags)

    def contains(self, value: float) -> bool:
        return self.lower <= value <= self.upper


def _bisect(f, inside: float, outside: float, f_inside: float, tol: float, max_iter: int = 200):
    """Root of ``f`` between a point with ``f > 0`` and one with ``f < 0``."""
    lo, hi = inside, outside
    root = outside
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        root = mid
        if abs(fm) < tol or mid in (lo, hi):
            break
        if fm > 0:
            lo = mid
        else:
            hi = mid
    return root


def lr_interval(
    profile: Callable[[float], float],
    estimate: float,
    loglik_max: float,
    alpha: float = 0.05,
    c0: float = 2.0,
    expansions: int = 5,
    tol: float = 1e-8,
) -> LRInterval:
    """Solve ``profile(t) + q/2 - loglik_max = 0`` on both sides of ``estimate``.

    ``profile(t)`` must return the log-likelihood maximized with the
    component fixed at ``t``.  Brackets start at width ``c0`` and double up to
    ``expansions`` times; if the sign never changes, the bound is reported as
    infinite and the interval is flagged.
    """
    if not 0 < alpha <= 1:
        raise ValueError("alpha must be in (0, 1]")
    q = chi2_quantile(1.0 - alpha, 1)
    if q == 0.0:
        return LRInterval(estimate, estimate, estimate, alpha)

    def f(t):
        val = profile(t)
        if not np.isfinite(val):
            return -math.inf
        return val + 0.5 * q - loglik_max

    bounds = []
    flags = []
    for sign in (-1.0, 1.0):
        c = c0
        found = None
        for _ in range(expansions + 1):
            edge = estimate + sign * c
            if f(edge) < 0:
                found = edge
                break
            c *= 2.0
        if found is None:
            flags.append(f"no sign change on the {'lower' if sign < 0 else 'upper'} side")
            bounds.append(sign * math.inf)
            continue
        bounds.append(_bisect(f, estimate, found, 0.5 * q, tol))
    return LRInterval(estimate, bounds[0], bounds[1], alpha, flags)


def lr_confint(
    data: SurvivalData,
    grid: CutGrid,
    full_fit: FitResult,
    component: int,
    alpha: float = 0.05,
    config: Optional[FitConfig] = None,
) -> LRInterval:
    """Profile-likelihood interval for the flat component ``component`` of ``(a, beta[, cure])``.

    Each evaluation re-maximizes the other components, warm-started from the
    closest solution found so far.
    """
    est = float(full_fit.params.vector()[component])
    if full_fit.pinned is not None and component < full_fit.params.K and full_fit.pinned[component]:
        return LRInterval(est, -math.inf, est, alpha, ["pinned piece"])
    cache: list = [(est, full_fit.params)]

    def profile(t):
        start = min(cache, key=lambda item: abs(item[0] - t))[1]
        res = profile_fit(data, grid, start, {component: t}, full_fit.pinned, config)
        cache.append((t, res.params))
        return res.loglik

    out = lr_interval(profile, est, full_fit.obs_loglik, alpha)
    if not full_fit.converged:
        out.flags.append("full fit not converged")
    return out


@dataclass
class AsymptoticVariance:
    covariance: np.ndarray  # over the free (a, beta) coordinates of the fit
    var_beta: np.ndarray
    var_log_hazard: np.ndarray
    var_rate: np.ndarray  # delta method, exp(2 a_k) var(a_k)
    grid: CutGrid

    def var_hazard(self, t):
        """Variance of the estimated baseline hazard at ``t`` (piecewise constant)."""
        return self.var_rate[self.grid.piece_index(t)]


def asymptotic_variance(fit: FitResult, data: SurvivalData) -> AsymptoticVariance:
    """Plug-in variances from the inverse observed information at the fit."""
    if fit.params.cure is not None:
        raise ModelError("plug-in variances are available without cure only")
    grid = fit.grid
    K, d = grid.K, data.d_z
    H = observed_score_hessian(fit.params, data, grid).hessian
    keep = np.ones(K + d, dtype=bool)
    if fit.pinned is not None:
        keep[:K] &= ~fit.pinned
    info = -H[np.ix_(keep, keep)]
    ka = int(np.sum(keep[:K]))
    for name, block in (("hazard", info[:ka, :ka]), ("beta", info[ka:, ka:])):
        if block.size:
            try:
                np.linalg.cholesky(block)
            except np.linalg.LinAlgError:
                raise SingularHessianError(name) from None
    try:
        cov_free = np.linalg.inv(info)
        np.linalg.cholesky(cov_free)
    except np.linalg.LinAlgError:
        raise SingularHessianError("joint") from None
    cov = np.full((K + d, K + d), np.nan)
    cov[np.ix_(keep, keep)] = cov_free
    var_a = np.diag(cov)[:K].copy()
    var_a[~keep[:K]] = 0.0
    rates = np.exp(fit.params.log_hazard)
    return AsymptoticVariance(cov, cov[K:, K:], var_a, rates**2 * var_a, grid)


# bootstrap -----------------------------------------------------------------


@dataclass
class BootstrapConfig:
    """How each bootstrap replicate is refit.

    ``mode="fixed"`` fits on ``grid``; ``mode="path"`` reruns cut selection
    on ``grid`` and keeps the BIC-best refit.
    """

    grid: CutGrid
    mode: str = "fixed"
    penalties: Optional[np.ndarray] = None
    fit: FitConfig = field(default_factory=FitConfig)
    cure: Optional[str] = None
    alpha: float = 0.05
    threads: int = 1
    max_fail_fraction: float = 0.2


def survival_functional(times):
    """Baseline survival ``S_0(t)`` of the susceptibles at ``times``."""
    times = np.asarray(times, dtype=float)

    def fn(fit: FitResult):
        z0 = np.zeros(fit.params.d_z)
        return np.atleast_1d(survival(times, z0, fit.params, fit.grid))

    return _Functional("survival", fn, times)


def parameter_functional(names: Union[str, Sequence[int]] = "beta"):
    """Regression coefficients (``"beta"``) or flat parameter indices."""

    def fn(fit: FitResult):
        if isinstance(names, str):
            return fit.params.beta.copy()
        return fit.params.vector()[list(names)]

    return _Functional("parameter", fn, names)


@dataclass
class _Functional:
    kind: str
    fn: Callable
    arg: object

    def __call__(self, fit):
        return self.fn(fit)

    # closures do not pickle; rebuild from (kind, arg) in worker processes
    def __reduce__(self):
        if self.kind == "survival":
            return (survival_functional, (self.arg,))
        if self.kind == "parameter":
            return (parameter_functional, (self.arg,))
        raise TypeError("custom functionals cannot be sent to worker processes")


@dataclass
class BootstrapBands:
    point: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    replicates: np.ndarray  # (B_ok, p)
    n_failed: int
    alpha: float


def _fit_pipeline(data: SurvivalData, config: BootstrapConfig) -> FitResult:
    if config.mode == "fixed":
        return em_fit(data, config.grid, config.fit, cure=config.cure)
    if config.mode == "path":
        from .ridge import PathConfig, regularization_path

        path = regularization_path(
            data, config.grid, config.penalties, PathConfig(refit=config.fit), cure=config.cure
        )
        return path.best.refit
    raise ValueError(f"unknown bootstrap mode {config.mode!r}")


def default_resampler(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.integers(0, n, size=n)


def _replicate(args):
    data, config, functional, seed, b, resampler = args
    rng = np.random.default_rng(np.random.SeedSequence([seed, b]))
    idx = resampler(rng, data.n)
    try:
        fit = _fit_pipeline(data.subset(idx), config)
        return np.asarray(functional(fit), dtype=float)
    except (FloatingPointError, ArithmeticError, ModelError, np.linalg.LinAlgError) as exc:
        log.info("bootstrap replicate %d failed: %s", b, exc)
        return None


def bootstrap_ci(
    data: SurvivalData,
    config: BootstrapConfig,
    functional: Callable[[FitResult], np.ndarray],
    B: int,
    seed: int = 0,
    resampler: Callable = default_resampler,
) -> BootstrapBands:
    """Percentile bootstrap bands from case resampling.

    Replicate ``b`` draws its indices from a stream seeded by ``(seed, b)``,
    so results do not depend on ``config.threads``.  Bands are widened when
    needed so that they always contain the point estimate.
    """
    if B < 2:
        raise ValueError("B must be >= 2")
    point = np.asarray(functional(_fit_pipeline(data, config)), dtype=float)
    jobs = [(data, config, functional, seed, b, resampler) for b in range(B)]
    if config.threads > 1:
        with ProcessPoolExecutor(max_workers=config.threads) as pool:
            results = list(pool.map(_replicate, jobs))
    else:
        results = [_replicate(job) for job in jobs]
    ok = [r for r in results if r is not None]
    n_failed = B - len(ok)
    if n_failed > config.max_fail_fraction * B:
        raise FloatingPointError(f"{n_failed} of {B} bootstrap replicates failed")
    reps = np.vstack(ok)
    a = config.alpha
    lower = np.minimum(np.quantile(reps, a / 2, axis=0), point)
    upper = np.maximum(np.quantile(reps, 1 - a / 2, axis=0), point)
    return BootstrapBands(point, lower, upper, reps, n_failed, a)
