"""Adaptive ridge selection of the cut points.

The penalty on consecutive log-hazards is

    pen / 2 * sum_k w_k (a_{k+1} - a_k)^2,

with weights refreshed as ``w_k = 1 / ((a_{k+1} - a_k)^2 + eps^2)``.  At the
fixed point ``w_k (a_{k+1} - a_k)^2`` is close to 0 or 1, so the penalty
counts the jumps of the hazard.  A cut is kept when that criterion exceeds
0.99; the model is then refit without penalty on the kept cuts and the
penalty is chosen by BIC.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .estep import EStepBundle, DegenerateIntervalError
from .model import CutGrid, ModelParams, SurvivalData
from .mstep import (
    FitConfig,
    FitResult,
    StructuredHessian,
    add_penalty,
    em_fit,
    initial_params,
    penalty_value,
    q_score_hessian,
)

log = logging.getLogger(__name__)

SELECT_THRESHOLD = 0.99
DEFAULT_PENALTIES = np.exp(np.linspace(math.log(0.1), math.log(10_000.0), 200))


@dataclass
class PenaltyState:
    """Current penalty level and adaptive weights (length ``K - 1``)."""

    pen: float
    weights: np.ndarray
    epsilon: float = 1e-5

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if self.pen < 0:
            raise ValueError("pen must be nonnegative")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")

    @classmethod
    def initial(cls, K: int, pen: float = 0.0, epsilon: float = 1e-5):
        return cls(pen, np.ones(K - 1), epsilon)


def penalized_score_hessian(theta: ModelParams, bundle: EStepBundle, grid: CutGrid, state: PenaltyState):
    """Gradient and structured Hessian of ``Q - penalty``."""
    if grid.K < 2:
        raise ValueError("the penalty needs at least two pieces")
    g, H = q_score_hessian(theta, bundle, grid)
    g = g.copy()
    H = StructuredHessian(H.a_diag.copy(), H.a_off.copy(), H.cross, H.dense, H.cure)
    add_penalty(g, H, theta.log_hazard, state.pen, state.weights, None)
    return g, H


def penalty(a, state: PenaltyState) -> float:
    return penalty_value(np.asarray(a, dtype=float), state.pen, state.weights)


def weight_update(a_hat, epsilon: float = 1e-5) -> np.ndarray:
    d = np.diff(np.asarray(a_hat, dtype=float))
    return 1.0 / (d * d + epsilon * epsilon)


def selection_criterion(a_hat, weights) -> np.ndarray:
    d = np.diff(np.asarray(a_hat, dtype=float))
    return np.asarray(weights) * d * d


def selected_mask(a_hat, weights) -> np.ndarray:
    return selection_criterion(a_hat, weights) > SELECT_THRESHOLD


def select_cuts(a_hat, weights, grid: CutGrid) -> CutGrid:
    """Sub-grid of the interior cuts whose criterion exceeds 0.99."""
    keep = selected_mask(a_hat, weights)
    return CutGrid(grid.interior[keep])


def bic(obs_loglik: float, m: int, n: int) -> float:
    if n < 1:
        raise ValueError("n must be >= 1")
    return -2.0 * obs_loglik + m * math.log(n)


def collapse(a, grid: CutGrid, sub: CutGrid) -> np.ndarray:
    """Log-hazards of ``sub`` taken from the first fine piece of each coarse piece."""
    starts = np.searchsorted(grid.lower, sub.lower, side="left")
    return np.asarray(a)[starts]


@dataclass
class PathConfig:
    """Options of the regularization path.

    ``fit`` drives the penalized inner fits, ``refit`` the unpenalized
    refits on the selected cuts.
    """

    fit: FitConfig = field(default_factory=lambda: FitConfig(tol=1e-7, max_em_iter=500))
    refit: FitConfig = field(default_factory=FitConfig)
    epsilon: float = 1e-5
    max_weight_iter: int = 50
    stable_iters: int = 2
    warm_start: bool = True


@dataclass
class PathEntry:
    pen: float
    selected_cuts: CutGrid
    m: int
    refit: Optional[FitResult]
    bic: float
    penalized: Optional[FitResult] = None
    weight_iters: int = 0
    error: Optional[str] = None

    @property
    def loglik(self) -> float:
        return self.refit.obs_loglik if self.refit is not None else -np.inf


@dataclass
class PathResult:
    entries: list
    best_index: int
    n: int = 0

    @property
    def best(self) -> PathEntry:
        return self.entries[self.best_index]

    def distinct(self) -> list:
        """Indices of the first entry of every distinct selected cut set."""
        seen, out = set(), []
        for i, e in enumerate(self.entries):
            key = tuple(e.selected_cuts.interior)
            if e.refit is not None and key not in seen:
                seen.add(key)
                out.append(i)
        return out

    def records(self) -> list:
        """One flat record per entry, for plotting the path."""
        rows = []
        for e in self.entries:
            a = e.penalized.params.log_hazard if e.penalized is not None else np.array([])
            rows.append(
                {
                    "pen": e.pen,
                    "cuts": e.selected_cuts.interior.tolist(),
                    "m": e.m,
                    "loglik": e.loglik,
                    "bic": e.bic,
                    "a": a.tolist(),
                }
            )
        return rows


def _penalized_fit(data, grid, theta, state: PenaltyState, cfg: PathConfig):
    """Weight iteration at one penalty level; returns (fit, weights, iterations)."""
    weights = state.weights.copy()
    previous = None
    stable = 0
    fit = None
    it = 0
    for it in range(1, cfg.max_weight_iter + 1):
        fit = em_fit(data, grid, cfg.fit, init=theta, pen=state.pen, weights=weights)
        theta = fit.params
        weights = weight_update(theta.log_hazard, cfg.epsilon)
        sel = selected_mask(theta.log_hazard, weights)
        if previous is not None and np.array_equal(sel, previous):
            stable += 1
        else:
            stable = 1
        previous = sel
        if stable >= cfg.stable_iters:
            break
    return fit, weights, it


def regularization_path(
    data: SurvivalData,
    grid: CutGrid,
    penalties=None,
    config: Optional[PathConfig] = None,
    init: Optional[ModelParams] = None,
    cure: Optional[str] = None,
) -> PathResult:
    """Adaptive-ridge path over ``penalties`` with BIC selection.

    Parameters
    ----------
    data, grid
        Observations and the fine candidate grid (``K >= 2``).
    penalties
        Ascending penalty values; defaults to 200 log-spaced values in
        ``[0.1, 1e4]``.
    config
        Path options; see :class:`PathConfig`.
    init, cure
        Starting point (or cure type) of the first penalized fit.

    Returns
    -------
    PathResult
        One entry per penalty; the unpenalized refit and its BIC are shared
        between penalties that select the same cuts.
    """
    cfg = config or PathConfig()
    pens = np.asarray(DEFAULT_PENALTIES if penalties is None else penalties, dtype=float)
    if pens.ndim != 1 or pens.size == 0:
        raise ValueError("penalties must be a non-empty vector")
    if np.any(np.diff(pens) < 0):
        raise ValueError("penalties must be sorted ascending")
    if grid.K < 2:
        raise ValueError("the path needs a grid with at least one interior cut")

    start = init.copy() if init is not None else None
    if start is None:
        start = initial_params(data, grid, cure, cfg.fit.cure_init)
    theta = start
    weights = np.ones(grid.K - 1)
    refits: dict = {}
    entries = []
    for pen in pens:
        if not cfg.warm_start:
            theta, weights = start.copy(), np.ones(grid.K - 1)
        state = PenaltyState(float(pen), weights, cfg.epsilon)
        try:
            fit, weights, n_w = _penalized_fit(data, grid, theta, state, cfg)
        except (DegenerateIntervalError, FloatingPointError, np.linalg.LinAlgError) as exc:
            log.warning("penalized fit failed at pen=%g: %s", pen, exc)
            entries.append(PathEntry(float(pen), grid, 0, None, np.inf, error=str(exc)))
            continue
        theta = fit.params
        sub = select_cuts(theta.log_hazard, weights, grid)
        key = tuple(sub.interior)
        if key not in refits:
            try:
                init_sub = ModelParams(collapse(theta.log_hazard, grid, sub), theta.beta.copy(), theta.cure)
                refit = em_fit(data, sub, cfg.refit, init=init_sub)
                m = refit.n_params
                refits[key] = (refit, m, bic(refit.obs_loglik, m, data.n), None)
            except (DegenerateIntervalError, FloatingPointError, np.linalg.LinAlgError) as exc:
                refits[key] = (None, 0, np.inf, str(exc))
        refit, m, b, err = refits[key]
        entries.append(PathEntry(float(pen), sub, m, refit, b, fit, n_w, err))

    ok = [i for i, e in enumerate(entries) if e.refit is not None]
    if not ok:
        raise FloatingPointError("every penalty of the path failed")
    best = min(ok, key=lambda i: (entries[i].bic, i))
    return PathResult(entries, best, data.n)
