"""M-step machinery and the (G)EM driver for a fixed cut grid.

After the E-step the hazard part of ``Q`` has a Poisson-regression form::

    Q(a, beta) = sum_ik N_ik (a_k + beta z_i) - exp(a_k + beta z_i) E_ik

with expected events ``N`` and expected exposures ``E`` taken from the
bundle.  Its Hessian block in ``a`` is diagonal (tridiagonal once the
adaptive-ridge penalty is added), which the Schur-complement Newton step
exploits through a banded LDL factorization.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .estep import EStepBundle, e_step
from .model import (
    LOG_FLOOR,
    CutGrid,
    FitDivergence,
    LogisticCure,
    ModelError,
    ModelParams,
    ScalarCure,
    SurvivalData,
    expit,
)

log = logging.getLogger(__name__)


class NotPositiveDefinite(np.linalg.LinAlgError):
    pass


class SingularSchurBlock(np.linalg.LinAlgError):
    pass


def band_ldl_solve(diag, off, rhs):
    """Solve ``M x = rhs`` for symmetric positive definite tridiagonal ``M``.

    ``diag`` has length K, ``off`` the K-1 off-diagonal entries (pass zeros
    or an empty array for a diagonal matrix).  ``rhs`` may be (K,) or (K, m).
    Runs in O(K m).
    """
    diag = np.asarray(diag, dtype=float)
    off = np.zeros(diag.size - 1) if off is None or np.size(off) == 0 else np.asarray(off, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    vec = rhs.ndim == 1
    y = rhs.reshape(diag.size, -1).copy()
    K = diag.size
    if not np.any(off):
        if np.any(~(diag > 0)):
            raise NotPositiveDefinite(f"nonpositive pivot at index {int(np.argmin(diag))}")
        x = y / diag[:, None]
        return x[:, 0] if vec else x

    d = np.empty(K)
    l = np.empty(max(K - 1, 0))
    d[0] = diag[0]
    if not d[0] > 0:
        raise NotPositiveDefinite("nonpositive pivot at index 0")
    for k in range(1, K):
        l[k - 1] = off[k - 1] / d[k - 1]
        d[k] = diag[k] - l[k - 1] * off[k - 1]
        if not d[k] > 0:
            raise NotPositiveDefinite(f"nonpositive pivot at index {k}")
    for k in range(1, K):
        y[k] -= l[k - 1] * y[k - 1]
    y /= d[:, None]
    for k in range(K - 2, -1, -1):
        y[k] -= l[k] * y[k + 1]
    return y[:, 0] if vec else y


@dataclass
class StructuredHessian:
    """Hessian of ``Q`` (negative definite) in block form.

    ``a_diag``/``a_off`` hold the (tri)diagonal a-block, ``cross`` the
    (K, d) a-by-beta block, ``dense`` the (d, d) beta block.  The cure block
    (``p`` or ``gamma``) is kept apart because ``Q`` separates.
    """

    a_diag: np.ndarray
    a_off: np.ndarray
    cross: np.ndarray
    dense: np.ndarray
    cure: Optional[np.ndarray] = None

    @property
    def K(self):
        return self.a_diag.size

    def a_block(self) -> np.ndarray:
        K = self.K
        m = np.diag(self.a_diag)
        if K > 1:
            m[np.arange(K - 1), np.arange(1, K)] = self.a_off
            m[np.arange(1, K), np.arange(K - 1)] = self.a_off
        return m

    def to_dense(self) -> np.ndarray:
        """Full symmetric matrix over ``(a, beta[, cure])``."""
        top = np.hstack([self.a_block(), self.cross])
        bottom = np.hstack([self.cross.T, self.dense])
        full = np.vstack([top, bottom])
        if self.cure is not None:
            c = self.cure
            size = full.shape[0] + c.shape[0]
            out = np.zeros((size, size))
            out[: full.shape[0], : full.shape[0]] = full
            out[full.shape[0]:, full.shape[0]:] = c
            full = out
        return full


def newton_step_schur(gradient, hessian: StructuredHessian) -> np.ndarray:
    """Newton increment ``-H^{-1} g`` over ``(a, beta)`` via the Schur complement.

    With ``I = -H = [[A, B], [B^t, C]]`` and ``g = (b1, b2)``::

        x2 = (C - B^t A^{-1} B)^{-1} (b2 - B^t A^{-1} b1)
        x1 = A^{-1} b1 - A^{-1} B x2
    """
    K = hessian.K
    g = np.asarray(gradient, dtype=float)
    b1, b2 = g[:K], g[K:K + hessian.dense.shape[0]]
    A_diag, A_off = -hessian.a_diag, -hessian.a_off
    Bm = -hessian.cross
    d = Bm.shape[1]
    sol = band_ldl_solve(A_diag, A_off, np.column_stack([b1, Bm]) if d else b1[:, None])
    ainv_b1 = sol[:, 0]
    if d == 0:
        return ainv_b1
    ainv_B = sol[:, 1:]
    schur = -hessian.dense - Bm.T @ ainv_B
    rhs = b2 - Bm.T @ ainv_b1
    try:
        x2 = np.linalg.solve(schur, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularSchurBlock("singular Schur block C - B'A^{-1}B") from exc
    if not np.all(np.isfinite(x2)):
        raise SingularSchurBlock("singular Schur block C - B'A^{-1}B")
    x1 = ainv_b1 - ainv_B @ x2
    return np.concatenate([x1, x2])


class _HazardQ:
    """Hazard part of ``Q`` for one bundle, reduced to sufficient statistics."""

    def __init__(self, bundle: EStepBundle):
        self.z = bundle.data.z
        self.N = bundle.events()
        self.E = bundle.exposure()
        self.events_by_piece = self.N.sum(axis=0)
        self.events_by_subject = self.N.sum(axis=1)
        self.exposure_by_piece = self.E.sum(axis=0)
        self.z_events = self.z.T @ self.events_by_subject

    def lin(self, beta):
        return self.z @ beta if beta.size else np.zeros(self.z.shape[0])

    def value(self, a, beta):
        lin = self.lin(beta)
        if np.max(a, initial=-np.inf) > 700 or np.max(lin, initial=-np.inf) > 700:
            return -np.inf
        val = self.events_by_piece @ a
        if beta.size:
            val += self.z_events @ beta
            val -= np.exp(lin) @ (self.E @ np.exp(a))
        else:
            val -= self.exposure_by_piece @ np.exp(a)
        return float(val)

    def score_hessian(self, a, beta):
        ea = np.exp(a)
        if beta.size == 0:
            expo = self.exposure_by_piece
            ga = self.events_by_piece - ea * expo
            hd = -ea * expo
            K = a.size
            return ga, StructuredHessian(hd, np.zeros(max(K - 1, 0)), np.zeros((K, 0)), np.zeros((0, 0)))
        m = np.exp(self.lin(beta))
        per_piece = self.E.T @ m
        per_subject = m * (self.E @ ea)
        ga = self.events_by_piece - ea * per_piece
        gb = self.z_events - self.z.T @ per_subject
        hd = -ea * per_piece
        cross = -ea[:, None] * (self.E.T @ (m[:, None] * self.z))
        dense = -(self.z.T * per_subject) @ self.z
        K = a.size
        return np.concatenate([ga, gb]), StructuredHessian(hd, np.zeros(max(K - 1, 0)), cross, dense)


def _split_cure_score(theta: ModelParams, bundle: EStepBundle):
    pi = bundle.pi
    cure = theta.cure
    if isinstance(cure, ScalarCure):
        p = cure.p
        with np.errstate(divide="ignore", invalid="ignore"):
            g = np.sum(pi) / p - np.sum(1 - pi) / (1 - p)
            h = -np.sum(pi) / p**2 - np.sum(1 - pi) / (1 - p) ** 2
        return np.array([g]), np.array([[h]])
    if isinstance(cure, LogisticCure):
        x = bundle.data.x
        p = expit(x @ cure.gamma)
        g = x.T @ (pi - p)
        h = -(x.T * (p * (1 - p))) @ x
        return g, h
    return np.zeros(0), None


def q_score_hessian(theta: ModelParams, bundle: EStepBundle, grid: Optional[CutGrid] = None):
    """Gradient and structured Hessian of ``Q(theta | theta_old)``.

    The gradient is ordered ``(a, beta[, p or gamma])``; the a-block of the
    Hessian is diagonal.
    """
    hq = _HazardQ(bundle)
    g, H = hq.score_hessian(theta.log_hazard, theta.beta)
    gc, hc = _split_cure_score(theta, bundle)
    H.cure = hc
    return np.concatenate([g, gc]), H


def np_closed_form(bundle: EStepBundle, grid: Optional[CutGrid] = None, log_floor: float = LOG_FLOOR):
    """Covariate-free maximizer of ``Q``: occurrences over expected exposure."""
    N = bundle.events().sum(axis=0)
    E = bundle.exposure().sum(axis=0)
    if np.any((N > 0) & ~(E > 0)):
        raise AssertionError("positive expected events with zero exposure")
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.log(N / E)
    return np.where(N > 0, np.maximum(a, log_floor), log_floor)


def penalty_value(a, pen, weights, active=None):
    if pen == 0 or a.size < 2:
        return 0.0
    w = _effective_weights(weights, active)
    return 0.5 * pen * float(np.sum(w * np.diff(a) ** 2))


def _effective_weights(weights, active):
    w = np.asarray(weights, dtype=float)
    if active is not None:
        w = w * (active[:-1] & active[1:])
    return w


def add_penalty(gradient, hessian: StructuredHessian, a, pen, weights, active=None):
    """Add ``-pen/2 sum w_k (a_{k+1} - a_k)^2`` to a score/Hessian pair in place."""
    if pen == 0 or a.size < 2:
        return gradient, hessian
    w = _effective_weights(weights, active) * pen
    diff = np.diff(a)
    K = a.size
    gp = np.zeros(K)
    gp[:-1] += w * diff
    gp[1:] -= w * diff
    gradient[:K] += gp
    hd = hessian.a_diag.copy()
    hd[:-1] -= w
    hd[1:] -= w
    hessian.a_diag = hd
    hessian.a_off = hessian.a_off + w
    return gradient, hessian


def _restrict(gradient, hessian: StructuredHessian, free):
    """Zero the Newton system on non-free coordinates of ``(a, beta)``."""
    K = hessian.K
    g = gradient.copy()
    g[: free.size][~free] = 0.0
    fa, fb = free[:K], free[K:]
    hd = np.where(fa, hessian.a_diag, -1.0)
    off = hessian.a_off * (fa[:-1] & fa[1:])
    cross = hessian.cross * fa[:, None] * fb[None, :]
    dense = hessian.dense * np.outer(fb, fb)
    dense[~fb, ~fb] = -1.0
    return g, StructuredHessian(hd, off, cross, dense, hessian.cure)


@dataclass
class FitConfig:
    tol: float = 1e-7
    max_em_iter: int = 500
    max_newton_per_m: int = 25
    log_floor: float = LOG_FLOOR
    max_halvings: int = 10
    m_step: str = "auto"  # "auto", "closed" or "newton"
    gem: bool = True  # stop the inner Newton loop at the first Q increase
    cure_init: float = 0.9


@dataclass
class FitResult:
    params: ModelParams
    grid: CutGrid
    obs_loglik: float
    n_em_iters: int
    converged: bool
    trace: list = field(default_factory=list)
    pinned: Optional[np.ndarray] = None
    objective: float = np.nan
    flags: list = field(default_factory=list)

    @property
    def n_params(self) -> int:
        return self.params.n_free()


def empty_risk_pieces(data: SurvivalData, grid: CutGrid) -> np.ndarray:
    """Pieces that no censoring interval and no exact time can fall into."""
    hit = np.zeros(grid.K, dtype=bool)
    exact = data.exact
    if np.any(exact):
        hit[np.unique(grid.piece_index(data.left[exact]))] = True
    lo = np.maximum(grid.lower[None, :], data.left[~exact][:, None])
    hi = np.minimum(grid.upper[None, :], data.right[~exact][:, None])
    hit |= np.any(lo < hi, axis=0)
    return ~hit


def initial_params(data: SurvivalData, grid: CutGrid, cure: Optional[str] = None, p0: float = 0.9):
    """All-zero start (``p = p0`` for a scalar cure, ``gamma = 0`` for logistic)."""
    if cure in (None, "none"):
        cpart = None
    elif cure == "scalar":
        cpart = ScalarCure(p0)
    elif cure == "logistic":
        if data.x is None:
            raise ModelError("logistic cure model needs x_* covariates")
        cpart = LogisticCure(np.zeros(data.x.shape[1]))
    else:
        raise ModelError(f"unknown cure model {cure!r}")
    return ModelParams(np.zeros(grid.K), np.zeros(data.d_z), cpart)


class _Objective:
    """Penalized hazard-Q plus cure-Q for one E-step bundle."""

    def __init__(self, bundle, pen=0.0, weights=None, active=None):
        self.hq = _HazardQ(bundle)
        self.bundle = bundle
        self.pen = pen
        self.weights = weights
        self.active = active

    def hazard(self, a, beta):
        val = self.hq.value(a, beta)
        if self.weights is not None:
            val -= penalty_value(a, self.pen, self.weights, self.active)
        return val

    def hazard_score_hessian(self, a, beta):
        g, H = self.hq.score_hessian(a, beta)
        if self.weights is not None:
            add_penalty(g, H, a, self.pen, self.weights, self.active)
        return g, H


def _newton_hazard(obj: _Objective, a, beta, free, cfg: FitConfig):
    """GEM Newton update of ``(a, beta)`` on the (penalized) Q."""
    K = a.size
    theta = np.concatenate([a, beta])
    current = obj.hazard(a, beta)
    for _ in range(cfg.max_newton_per_m):
        g, H = obj.hazard_score_hessian(theta[:K], theta[K:])
        g, H = _restrict(g, H, free)
        try:
            step = newton_step_schur(g, H)
        except np.linalg.LinAlgError:
            step = g / max(1.0, np.max(np.abs(g)))
        else:
            # below rounding level of Q a value test cannot rank the points;
            # the quadratic model is exact enough to take the full step
            if float(g @ step) <= 1e-13 * (1.0 + abs(current)):
                theta = theta + step
                break
        accepted = False
        scale = 1.0
        for _ in range(cfg.max_halvings + 1):
            cand = theta + scale * step
            val = obj.hazard(cand[:K], cand[K:])
            if val > current:
                accepted = True
                break
            scale *= 0.5
        if not accepted:
            # small gradient step as a last resort
            gnorm = np.linalg.norm(g)
            if gnorm == 0:
                break
            cand = theta + 1e-4 * g / gnorm
            val = obj.hazard(cand[:K], cand[K:])
            if not val > current:
                break
        gain = val - current
        theta, current = cand, val
        if cfg.gem or gain <= 1e-12 * (1 + abs(current)):
            break
    return theta[:K], theta[K:]


def _update_cure(theta: ModelParams, bundle: EStepBundle, free_cure: bool, cfg: FitConfig):
    cure = theta.cure
    if cure is None or not free_cure:
        return cure
    pi = bundle.pi
    if isinstance(cure, ScalarCure):
        return ScalarCure(float(np.clip(np.mean(pi), 1e-12, 1.0)))
    x = bundle.data.x

    def q(gamma):
        u = x @ gamma
        # pi log p + (1 - pi) log(1 - p) with log p = -log1p(exp(-u))
        return float(np.sum(pi * u - np.logaddexp(0.0, u)))

    gamma = cure.gamma.copy()
    current = q(gamma)
    for _ in range(cfg.max_newton_per_m):
        p = expit(x @ gamma)
        g = x.T @ (pi - p)
        H = (x.T * (p * (1 - p))) @ x
        try:
            step = np.linalg.solve(H + 1e-12 * np.eye(H.shape[0]), g)
        except np.linalg.LinAlgError:
            step = g
        scale = 1.0
        accepted = False
        for _ in range(cfg.max_halvings + 1):
            cand = gamma + scale * step
            val = q(cand)
            if val > current:
                accepted = True
                break
            scale *= 0.5
        if not accepted:
            break
        gain = val - current
        gamma, current = cand, val
        if cfg.gem or gain <= 1e-12 * (1 + abs(current)):
            break
    return LogisticCure(gamma)


def m_step(
    theta: ModelParams,
    bundle: EStepBundle,
    cfg: FitConfig,
    free: Optional[np.ndarray] = None,
    pen: float = 0.0,
    weights=None,
) -> ModelParams:
    """One (G)EM M-step.  ``free`` masks ``(a, beta[, cure])`` coordinates."""
    K, d = theta.K, theta.d_z
    n_cure = theta.n_free() - K - d
    if free is None:
        free = np.ones(K + d + n_cure, dtype=bool)
    free_hazard = free[: K + d]
    active = free[:K]
    obj = _Objective(bundle, pen, weights if weights is not None and pen > 0 else None, active)

    mode = cfg.m_step
    closed = mode == "closed" or (mode == "auto" and d == 0 and (weights is None or pen == 0))
    if closed:
        if d:
            raise ModelError("closed-form M-step needs a model without covariates")
        a_new = np_closed_form(bundle, log_floor=cfg.log_floor)
        a = np.where(active, a_new, theta.log_hazard)
        beta = theta.beta
    else:
        a, beta = _newton_hazard(obj, theta.log_hazard, theta.beta, free_hazard, cfg)
    cure = _update_cure(theta, bundle, bool(np.all(free[K + d:])) and n_cure > 0, cfg)
    return ModelParams(a, beta, cure)


def em_fit(
    data: SurvivalData,
    grid: CutGrid,
    config: Optional[FitConfig] = None,
    init: Optional[ModelParams] = None,
    cure: Optional[str] = None,
    fixed: Optional[dict] = None,
    pen: float = 0.0,
    weights=None,
) -> FitResult:
    """Fit the piecewise-constant hazard model on ``grid`` by (G)EM.

    Parameters
    ----------
    data, grid
        Observations and the fixed cut grid.
    config
        Tolerances and M-step options.
    init
        Starting parameters; defaults to zeros (and ``p = 0.9``).
    cure
        ``None``, ``"scalar"`` or ``"logistic"`` when ``init`` is not given.
    fixed
        ``{flat index: value}`` coordinates of ``(a, beta[, cure])`` held fixed.
    pen, weights
        Adaptive-ridge penalty on consecutive log-hazard differences.

    Convergence is declared when the relative change of the observed
    (penalized) log-likelihood falls below ``config.tol``.
    """
    cfg = config or FitConfig()
    if data.n < 1:
        raise ModelError("no observations")
    theta = init.copy() if init is not None else initial_params(data, grid, cure, cfg.cure_init)
    theta.check(grid, data.d_z)
    if isinstance(theta.cure, LogisticCure) and data.x is None:
        raise ModelError("logistic cure model needs x_* covariates")
    size = theta.n_free()
    free = np.ones(size, dtype=bool)
    vec = theta.vector()
    if fixed:
        for idx, value in fixed.items():
            free[idx] = False
            vec[idx] = value
        theta = theta.with_vector(vec)
    pinned = empty_risk_pieces(data, grid)
    K = grid.K
    a = theta.log_hazard
    a[pinned] = cfg.log_floor
    free[:K] &= ~pinned
    flags = []
    if np.any(pinned):
        flags.append(f"empty-risk pieces {np.flatnonzero(pinned).tolist()}")

    def objective(th, bundle):
        if weights is None or pen == 0:
            return bundle.loglik
        return bundle.loglik - penalty_value(th.log_hazard, pen, weights, free[:K])

    bundle = e_step(theta, data, grid)
    current = objective(theta, bundle)
    trace = [current]
    converged = False
    it = 0
    for it in range(1, cfg.max_em_iter + 1):
        new = m_step(theta, bundle, cfg, free, pen, weights)
        low = free[:K] & (new.log_hazard < cfg.log_floor)
        if np.any(low):
            new.log_hazard[low] = cfg.log_floor
            free[:K] &= ~low
            pinned = pinned | low
            flags.append(f"pieces {np.flatnonzero(low).tolist()} pinned at log floor")
        if np.max(new.log_hazard) > 700:
            raise FitDivergence("log hazard diverged to +inf")
        new_bundle = e_step(new, data, grid)
        value = objective(new, new_bundle)
        trace.append(value)
        change = abs(value - current) / (abs(current) + 1.0)
        theta, bundle, current = new, new_bundle, value
        if change < cfg.tol:
            converged = True
            break
    if not converged:
        flags.append("max_em_iter reached")
    return FitResult(
        params=theta,
        grid=grid,
        obs_loglik=bundle.loglik,
        n_em_iters=it,
        converged=converged,
        trace=trace,
        pinned=pinned,
        objective=current,
        flags=flags,
    )
