"""E-step: conditional expectations of the complete-data log-likelihood.

For a non-exact subject with interval ``(L, R)`` and piece ``k``

* ``A[i, k]`` is the conditional probability that ``T`` falls in piece ``k``;
* ``B[i, k]`` is ``E[(T - c_{k-1}) 1{T in piece k} | L < T < R]``.

Exact subjects contribute the occurrence indicator ``O`` and exposure ``Rexp``.
All integrals use closed forms evaluated in log space: every survival ratio
is formed as ``exp(Lambda(L) - Lambda(t))`` so late pieces never underflow.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from numba import njit

from .model import (
    CensorClass,
    CutGrid,
    IntervalObservation,
    ModelError,
    ModelParams,
    SurvivalData,
    susceptible_probability,
)

_DEGENERATE_MASS = 1e-300


class DegenerateIntervalError(FloatingPointError):
    """The current parameters give (numerically) zero mass to some intervals."""

    def __init__(self, subjects):
        self.subjects = list(subjects)
        super().__init__(
            f"degenerate interval probability for subjects {self.subjects[:10]}"
            + (" ..." if len(self.subjects) > 10 else "")
        )


@njit(cache=True)
def _phi(x):
    """``1 - (1 + x) exp(-x)``, accurate near 0; ``phi(inf) = 1``."""
    if x < 0.5:
        # alternating series sum_{m>=2} (-1)^m (m-1) x^m / m!
        term = 0.5 * x * x
        acc = term
        for m in range(3, 24):
            term = -term * x / m
            acc += term * (m - 1)
        return acc
    if np.isinf(x):
        return 1.0
    return -np.expm1(-x) - x * np.exp(-x)


@njit(cache=True)
def _interval_kernel(left, right, scale, rates, at_lower, lower, upper, A, B, log_mass, lam_left):
    """Fill A, B, log_mass and Lambda(L); return the index of the first degenerate row or -1."""
    n = left.size
    K = rates.size
    for i in range(n):
        L = left[i]
        R = right[i]
        m = scale[i]
        # cumulative hazard at L and R
        kl = np.searchsorted(upper[:-1], L)
        lam_l = m * (at_lower[kl] + rates[kl] * (L - lower[kl]))
        if np.isinf(R):
            lam_r = np.inf
        else:
            kr = np.searchsorted(upper[:-1], R)
            lam_r = m * (at_lower[kr] + rates[kr] * (R - lower[kr]))
        ratio = -np.expm1(-(lam_r - lam_l))
        if not (ratio > _DEGENERATE_MASS) or not np.isfinite(lam_l):
            return i
        lam_left[i] = lam_l
        log_mass[i] = -lam_l + np.log(ratio)
        for k in range(kl, K):
            lo = max(lower[k], L)
            hi = min(upper[k], R)
            if upper[k] >= R and not lo < hi:
                break
            if not lo < hi:
                # L sits exactly on the upper cut of piece k
                continue
            h = m * rates[k]
            u0 = lo - lower[k]
            lam_lo = m * (at_lower[k] + rates[k] * u0)
            w = np.exp(min(lam_l - lam_lo, 0.0))
            x = h * (hi - lo)
            g1 = -np.expm1(-x)
            A[i, k] = w * g1 / ratio
            B[i, k] = w * (u0 * g1 + _phi(x) / h) / ratio
    return -1


@dataclass
class EStepBundle:
    """Per-subject E-step statistics, all (n, K) except ``pi``.

    ``A``/``B`` are zero on exact rows, ``O``/``Rexp`` zero on the others.
    ``pi`` is the conditional probability of being susceptible (all ones
    without a cure component).
    """

    A: np.ndarray
    B: np.ndarray
    O: np.ndarray
    Rexp: np.ndarray
    pi: np.ndarray
    theta_old: ModelParams
    data: SurvivalData
    grid: CutGrid
    loglik: float = np.nan

    def events(self) -> np.ndarray:
        """Expected number of events per subject and piece."""
        return self.pi[:, None] * self.A + self.O

    def exposure(self) -> np.ndarray:
        """Expected time at risk per subject and piece (baseline units)."""
        tail = np.cumsum(self.A[:, ::-1], axis=1)[:, ::-1]
        tail = np.concatenate([tail[:, 1:], np.zeros((tail.shape[0], 1))], axis=1)
        widths = np.where(np.isfinite(self.grid.widths), self.grid.widths, 0.0)
        return self.pi[:, None] * (tail * widths + self.B) + self.Rexp


class _Cumulative:
    """Cumulative-hazard evaluator for a fixed (params, grid, data)."""

    def __init__(self, params: ModelParams, grid: CutGrid, lin):
        self.grid = grid
        self.rates = np.exp(params.log_hazard)
        widths = np.where(np.isfinite(grid.widths), grid.widths, 0.0)
        self.at_lower = np.concatenate([[0.0], np.cumsum(self.rates[:-1] * widths[:-1])])
        self.scale = np.exp(lin)

    def baseline(self, t):
        t = np.asarray(t, dtype=float)
        k = self.grid.piece_index(t)
        finite = np.isfinite(t)
        out = np.full(t.shape, np.inf)
        kk = k[finite]
        out[finite] = self.at_lower[kk] + self.rates[kk] * (t[finite] - self.grid.lower[kk])
        return out

    def __call__(self, t):
        return self.scale * self.baseline(t)


def interval_block(left, right, lin, params: ModelParams, grid: CutGrid, index=None):
    """A/B rows for non-exact subjects.

    Returns ``(A, B, log_mass, lam_left)`` with ``log_mass = log(S(L) - S(R))``
    and ``lam_left = Lambda(L)`` under the susceptible survival.
    """
    left = np.ascontiguousarray(left, dtype=float)
    right = np.ascontiguousarray(right, dtype=float)
    scale = np.exp(np.asarray(lin, dtype=float))
    rates = np.exp(params.log_hazard)
    widths = np.where(np.isfinite(grid.widths), grid.widths, 0.0)
    at_lower = np.concatenate([[0.0], np.cumsum(rates[:-1] * widths[:-1])])
    n, K = left.size, grid.K
    A = np.zeros((n, K))
    B = np.zeros((n, K))
    log_mass = np.zeros(n)
    lam_left = np.zeros(n)
    bad = _interval_kernel(left, right, scale, rates, at_lower, grid.lower, grid.upper, A, B, log_mass, lam_left)
    if bad >= 0:
        # report every degenerate row, not just the first
        ratio = -np.expm1(-(_Cumulative(params, grid, lin)(right) - _Cumulative(params, grid, lin)(left)))
        idx = np.flatnonzero(~(ratio > _DEGENERATE_MASS))
        if idx.size == 0:
            idx = np.array([bad])
        if index is not None:
            idx = np.asarray(index)[idx]
        raise DegenerateIntervalError(idx.tolist())
    return A, B, log_mass, lam_left


def exact_block(times, grid: CutGrid):
    """Occurrence indicators and clamped exposures of exact event times."""
    times = np.asarray(times, dtype=float)
    if np.any(times <= 0):
        raise ModelError("exact event times must be positive")
    O = np.zeros((times.size, grid.K))
    O[np.arange(times.size), grid.piece_index(times)] = 1.0
    return O, grid.exposure(times)


def e_step(params: ModelParams, data: SurvivalData, grid: CutGrid) -> EStepBundle:
    """Build the E-step bundle at ``params`` and record the observed log-likelihood."""
    params.check(grid, data.d_z)
    n, K = data.n, grid.K
    lin = data.z @ params.beta if data.d_z else np.zeros(n)
    exact = data.exact
    rows = np.flatnonzero(~exact)
    A = np.zeros((n, K))
    B = np.zeros((n, K))
    O = np.zeros((n, K))
    Rexp = np.zeros((n, K))
    log_mass = np.zeros(n)
    lam_left = np.zeros(n)
    if rows.size:
        A[rows], B[rows], log_mass[rows], lam_left[rows] = interval_block(
            data.left[rows], data.right[rows], lin[rows], params, grid, index=rows
        )
    erows = np.flatnonzero(exact)
    if erows.size:
        O[erows], Rexp[erows] = exact_block(data.left[erows], grid)
        # log f(T) = a_k + lin - Lambda(T)
        rates = np.exp(params.log_hazard)
        log_mass[erows] = (
            O[erows] @ params.log_hazard + lin[erows] - np.exp(lin[erows]) * (Rexp[erows] @ rates)
        )

    pi = np.ones(n)
    if params.cure is None:
        loglik = float(np.sum(log_mass))
    else:
        p = susceptible_probability(params, data.x, n)
        right = data.censor_class == CensorClass.RIGHT
        s_left = np.exp(-lam_left[right])
        mix = 1.0 - p[right] + p[right] * s_left
        pi[right] = p[right] * s_left / mix
        with np.errstate(divide="ignore"):
            logp = np.log(p)
        ll = np.where(right, 0.0, logp + log_mass)
        ll[right] = np.log(mix)
        loglik = float(np.sum(ll))
    return EStepBundle(A, B, O, Rexp, pi, params.copy(), data, grid, loglik)


def interval_stats(obs: IntervalObservation, theta_old: ModelParams, grid: CutGrid):
    """A and B rows for one non-exact subject."""
    if obs.censor_class == CensorClass.EXACT:
        raise ModelError("interval_stats needs a non-exact observation")
    lin = float(obs.z @ theta_old.beta) if theta_old.d_z else 0.0
    A, B, _, _ = interval_block([obs.left], [obs.right], [lin], theta_old, grid)
    return A[0], B[0]


def exact_stats(obs: IntervalObservation, grid: CutGrid):
    if obs.censor_class != CensorClass.EXACT:
        raise ModelError("exact_stats needs an exact observation")
    O, R = exact_block([obs.left], grid)
    return O[0], R[0]


def cure_weight(obs: IntervalObservation, theta_old: ModelParams, grid: CutGrid) -> float:
    """Posterior probability that the subject is susceptible."""
    if theta_old.cure is None:
        raise ModelError("cure_weight needs a cure component")
    if obs.delta == 1:
        return 1.0
    p = float(susceptible_probability(theta_old, None if obs.x is None else obs.x[None, :], 1)[0])
    lin = float(obs.z @ theta_old.beta) if theta_old.d_z else 0.0
    s = float(np.exp(-_Cumulative(theta_old, grid, np.array([lin]))(np.array([obs.left]))[0]))
    return p * s / (1.0 - p + p * s)


def q_value(theta: ModelParams, bundle: EStepBundle, grid: Optional[CutGrid] = None) -> float:
    """``Q(theta | theta_old)`` for the bundle built at ``theta_old``."""
    grid = grid or bundle.grid
    data = bundle.data
    lin = data.z @ theta.beta if data.d_z else np.zeros(data.n)
    events = bundle.events()
    expo = bundle.exposure()
    rates = np.exp(theta.log_hazard)
    value = float(np.sum(events * (theta.log_hazard[None, :] + lin[:, None])))
    value -= float(np.sum(np.exp(lin) * (expo @ rates)))
    if theta.cure is not None:
        value += cure_q_value(theta, bundle)
    return value


def cure_q_value(theta: ModelParams, bundle: EStepBundle) -> float:
    p = susceptible_probability(theta, bundle.data.x, bundle.data.n)
    pi = bundle.pi
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(pi > 0, pi * np.log(p), 0.0) + np.where(pi < 1, (1 - pi) * np.log1p(-p), 0.0)
    return float(np.sum(terms))
