"""Piecewise-constant proportional hazards model: data containers, cut grids,
parameters, and evaluation of hazard, cumulative hazard, survival and density.

Pieces are half-open on the left, ``(c_{k-1}, c_k]``, with ``c_0 = 0`` and
``c_K = inf`` implicit.  Baseline hazards are stored on the log scale.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

LOG_FLOOR = -30.0
_EXP_MAX = 700.0


class ModelError(ValueError):
    """Invalid input to a model evaluation (dimensions, negative times)."""


class FitDivergence(FloatingPointError):
    """Hazard magnitudes overflowed during evaluation."""


class CensorClass(enum.IntEnum):
    LEFT = 0
    INTERVAL = 1
    RIGHT = 2
    EXACT = 3


def classify(left, right):
    """Censoring class of each ``(left, right)`` pair.

    ``right == inf`` wins over ``left == 0``, so ``(0, inf)`` is right censored.
    """
    left = np.asarray(left, dtype=float)
    right = np.asarray(right, dtype=float)
    cls = np.full(left.shape, CensorClass.INTERVAL, dtype=np.int8)
    cls[(left == 0) & np.isfinite(right)] = CensorClass.LEFT
    cls[np.isinf(right)] = CensorClass.RIGHT
    cls[left == right] = CensorClass.EXACT
    return cls


@dataclass(frozen=True)
class IntervalObservation:
    """One subject: ``T`` lies in ``[left, right]``; ``left == right`` is exact."""

    left: float
    right: float
    z: np.ndarray = field(default_factory=lambda: np.zeros(0))
    x: Optional[np.ndarray] = None

    def __post_init__(self):
        if not (0 <= self.left <= self.right):
            raise ModelError(f"need 0 <= left <= right, got ({self.left}, {self.right})")
        object.__setattr__(self, "z", np.atleast_1d(np.asarray(self.z, dtype=float)))
        if self.x is not None:
            object.__setattr__(self, "x", np.atleast_1d(np.asarray(self.x, dtype=float)))

    @property
    def censor_class(self) -> CensorClass:
        return CensorClass(int(classify(self.left, self.right)))

    @property
    def delta(self) -> int:
        return int(self.censor_class != CensorClass.RIGHT)


@dataclass
class SurvivalData:
    """Column-oriented store of ``n`` interval-censored observations.

    Attributes
    ----------
    left, right : (n,) arrays
        Censoring interval bounds; ``right`` may be ``inf``.
    z : (n, d_z) array
        Hazard covariates (``d_z`` may be 0).
    x : (n, d_x) array or None
        Cure covariates including the intercept column.
    """

    left: np.ndarray
    right: np.ndarray
    z: np.ndarray = None
    x: Optional[np.ndarray] = None
    z_names: Optional[list] = None
    x_names: Optional[list] = None

    def __post_init__(self):
        self.left = np.asarray(self.left, dtype=float).ravel()
        self.right = np.asarray(self.right, dtype=float).ravel()
        n = self.left.size
        if self.right.size != n:
            raise ModelError("left and right must have the same length")
        if self.z is None:
            self.z = np.zeros((n, 0))
        self.z = np.asarray(self.z, dtype=float)
        if self.z.ndim == 1:
            self.z = self.z[:, None]
        if self.z.shape[0] != n:
            raise ModelError(f"z has {self.z.shape[0]} rows, expected {n}")
        if self.x is not None:
            self.x = np.asarray(self.x, dtype=float)
            if self.x.ndim == 1:
                self.x = self.x[:, None]
            if self.x.shape[0] != n:
                raise ModelError(f"x has {self.x.shape[0]} rows, expected {n}")
        if np.any(np.isnan(self.left)) or np.any(np.isnan(self.right)):
            raise ModelError("NaN in censoring bounds")
        bad = np.flatnonzero((self.left < 0) | (self.right < self.left) | np.isinf(self.left))
        if bad.size:
            raise ModelError(f"invalid interval for subjects {bad[:10].tolist()}")
        if self.z_names is None:
            self.z_names = [f"z_{j + 1}" for j in range(self.z.shape[1])]
        if self.x is not None and self.x_names is None:
            self.x_names = [f"x_{j + 1}" for j in range(self.x.shape[1])]
        self.censor_class = classify(self.left, self.right)

    @classmethod
    def from_observations(cls, observations: Sequence[IntervalObservation]) -> "SurvivalData":
        left = [o.left for o in observations]
        right = [o.right for o in observations]
        z = np.array([o.z for o in observations], dtype=float).reshape(len(observations), -1)
        x = None
        if observations and observations[0].x is not None:
            x = np.array([o.x for o in observations], dtype=float)
        return cls(left, right, z, x)

    def __len__(self):
        return self.left.size

    @property
    def n(self) -> int:
        return self.left.size

    @property
    def d_z(self) -> int:
        return self.z.shape[1]

    @property
    def exact(self) -> np.ndarray:
        return self.censor_class == CensorClass.EXACT

    @property
    def delta(self) -> np.ndarray:
        return (self.censor_class != CensorClass.RIGHT).astype(int)

    def observation(self, i: int) -> IntervalObservation:
        x = None if self.x is None else self.x[i]
        return IntervalObservation(self.left[i], self.right[i], self.z[i], x)

    def subset(self, index) -> "SurvivalData":
        index = np.asarray(index)
        return SurvivalData(
            self.left[index],
            self.right[index],
            self.z[index],
            None if self.x is None else self.x[index],
            list(self.z_names),
            None if self.x_names is None else list(self.x_names),
        )

    def class_counts(self) -> dict:
        return {c.name.lower(): int(np.sum(self.censor_class == c)) for c in CensorClass}


class CutGrid:
    """Interior cuts ``c_1 < ... < c_{K-1}``; ``c_0 = 0`` and ``c_K = inf`` implied."""

    def __init__(self, interior_cuts: Sequence[float] = ()):
        cuts = np.asarray(interior_cuts, dtype=float).ravel()
        if cuts.size and (np.any(cuts <= 0) or np.any(~np.isfinite(cuts))):
            raise ModelError("interior cuts must be positive and finite")
        if np.any(np.diff(cuts) <= 0):
            raise ModelError("interior cuts must be strictly increasing")
        self.interior = cuts
        self.bounds = np.concatenate([[0.0], cuts, [np.inf]])
        self.lower = self.bounds[:-1]
        self.upper = self.bounds[1:]
        # widths of pieces 1..K-1; the last piece is unbounded
        self.widths = np.diff(self.bounds)

    @property
    def K(self) -> int:
        return self.interior.size + 1

    @classmethod
    def regular(cls, start: float, stop: float, step: float) -> "CutGrid":
        count = int(round((stop - start) / step)) + 1
        return cls(start + step * np.arange(count))

    def piece_index(self, t):
        """0-based piece of each ``t > 0``: piece ``k`` covers ``(c_k, c_{k+1}]``."""
        t = np.asarray(t, dtype=float)
        return np.searchsorted(self.interior, t, side="left")

    def __eq__(self, other):
        return isinstance(other, CutGrid) and np.array_equal(self.interior, other.interior)

    def __hash__(self):
        return hash(tuple(self.interior.tolist()))

    def __repr__(self):
        return f"CutGrid({self.interior.tolist()})"

    def exposure(self, t) -> np.ndarray:
        """(len(t), K) time spent in each piece over ``(0, t]``; ``t`` may be inf."""
        t = np.asarray(t, dtype=float)[..., None]
        out = np.minimum(t, self.upper) - self.lower
        np.maximum(out, 0.0, out=out)
        return out


@dataclass(frozen=True)
class ScalarCure:
    """Constant probability ``p`` of being susceptible."""

    p: float


@dataclass(frozen=True)
class LogisticCure:
    """Susceptibility probability ``expit(gamma . x)``."""

    gamma: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "gamma", np.atleast_1d(np.asarray(self.gamma, dtype=float)))


Cure = Union[None, ScalarCure, LogisticCure]


@dataclass
class ModelParams:
    log_hazard: np.ndarray
    beta: np.ndarray = None
    cure: Cure = None

    def __post_init__(self):
        self.log_hazard = np.atleast_1d(np.asarray(self.log_hazard, dtype=float)).copy()
        if self.beta is None:
            self.beta = np.zeros(0)
        self.beta = np.atleast_1d(np.asarray(self.beta, dtype=float)).copy()

    @property
    def K(self) -> int:
        return self.log_hazard.size

    @property
    def d_z(self) -> int:
        return self.beta.size

    def copy(self) -> "ModelParams":
        cure = self.cure
        if isinstance(cure, LogisticCure):
            cure = LogisticCure(cure.gamma.copy())
        return ModelParams(self.log_hazard.copy(), self.beta.copy(), cure)

    def vector(self) -> np.ndarray:
        """Flatten to ``(a, beta[, p or gamma])``."""
        parts = [self.log_hazard, self.beta]
        if isinstance(self.cure, ScalarCure):
            parts.append([self.cure.p])
        elif isinstance(self.cure, LogisticCure):
            parts.append(self.cure.gamma)
        return np.concatenate(parts)

    def with_vector(self, vec) -> "ModelParams":
        vec = np.asarray(vec, dtype=float)
        K, d = self.K, self.d_z
        cure = self.cure
        if isinstance(cure, ScalarCure):
            cure = ScalarCure(float(vec[K + d]))
        elif isinstance(cure, LogisticCure):
            cure = LogisticCure(vec[K + d:])
        return ModelParams(vec[:K], vec[K:K + d], cure)

    def n_free(self) -> int:
        return self.vector().size

    def check(self, grid: CutGrid, d_z: int):
        if self.K != grid.K:
            raise ModelError(f"log_hazard has {self.K} entries, grid has {grid.K} pieces")
        if self.d_z != d_z:
            raise ModelError(f"beta has {self.d_z} entries, covariates have {d_z}")


def susceptible_probability(params: ModelParams, x=None, n=None) -> np.ndarray:
    """Per-subject probability of being susceptible (1 when there is no cure part)."""
    cure = params.cure
    if cure is None:
        return np.ones(n if n is not None else (0 if x is None else len(x)))
    if isinstance(cure, ScalarCure):
        size = n if n is not None else len(x)
        return np.full(size, float(cure.p))
    if x is None:
        raise ModelError("logistic cure model needs cure covariates x")
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != cure.gamma.size:
        raise ModelError(f"x has {x.shape[1]} columns, gamma has {cure.gamma.size}")
    return expit(x @ cure.gamma)


def expit(u):
    u = np.asarray(u, dtype=float)
    out = np.empty_like(u)
    pos = u >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-u[pos]))
    e = np.exp(u[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def linear_predictor(z, beta):
    """``beta . z`` for one covariate vector (scalar) or a (n, d) matrix."""
    beta = np.asarray(beta, dtype=float)
    z = np.asarray(z, dtype=float)
    if beta.size == 0:
        if np.any(z != 0):
            raise ModelError("covariates given but the model has no beta")
        return 0.0 if z.ndim <= 1 else np.zeros(z.shape[0])
    if z.ndim <= 1:
        if z.size != beta.size:
            raise ModelError(f"covariate vector has {z.size} entries, beta has {beta.size}")
        return float(z @ beta)
    if z.shape[1] != beta.size:
        raise ModelError(f"covariates have {z.shape[1]} columns, beta has {beta.size}")
    return z @ beta


def _rates(log_hazard):
    if np.max(log_hazard) > _EXP_MAX:
        raise FitDivergence("log hazard overflow")
    return np.exp(log_hazard)


def baseline_cumulative_hazard(t, params: ModelParams, grid: CutGrid) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ModelError("times must be nonnegative")
    params.check(grid, params.d_z)
    rates = _rates(params.log_hazard)
    expo = grid.exposure(t)
    # inf * 0 never occurs: finite t gives finite exposure
    return np.where(np.isinf(t), np.inf, np.sum(np.where(expo > 0, expo * rates, 0.0), axis=-1))


def cumulative_hazard(t, z, params: ModelParams, grid: CutGrid):
    """``exp(beta z) * sum_k exp(a_k) * |(0, t] ∩ piece_k|``.

    ``z`` is one covariate vector or an (n, d) matrix broadcast against ``t``.
    """
    lin = linear_predictor(z, params.beta)
    if np.max(lin, initial=-np.inf) > _EXP_MAX:
        raise FitDivergence("linear predictor overflow")
    out = baseline_cumulative_hazard(t, params, grid) * np.exp(lin)
    return float(out) if np.ndim(out) == 0 else out


def survival(t, z, params: ModelParams, grid: CutGrid, marginal: bool = False, x=None):
    """Survival function of the susceptibles, or the cure-mixture marginal.

    ``marginal=True`` returns ``1 - p + p * S(t)`` where ``p`` comes from the
    cure component (``x`` is needed for the logistic link).
    """
    s = np.exp(-np.asarray(cumulative_hazard(t, z, params, grid)))
    if marginal and params.cure is not None:
        if isinstance(params.cure, ScalarCure):
            p = params.cure.p
        else:
            x = np.asarray(x, dtype=float)
            p = susceptible_probability(params, np.atleast_2d(x))
            p = p[0] if x.ndim == 1 else p
        s = 1.0 - p + p * s
    return float(s) if np.ndim(s) == 0 else s


def hazard(t, z, params: ModelParams, grid: CutGrid):
    lin = linear_predictor(z, params.beta)
    out = np.exp(params.log_hazard[grid.piece_index(t)] + lin)
    return float(out) if np.ndim(out) == 0 else out


def density(t, z, params: ModelParams, grid: CutGrid):
    """``lambda(t|z) S(t|z)`` for finite ``t > 0``."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr <= 0) or np.any(~np.isfinite(t_arr)):
        raise ModelError("density needs finite t > 0")
    return hazard(t, z, params, grid) * survival(t, z, params, grid)
