"""Simulated designs and the Monte Carlo study harness.

Models
    M1: piecewise-constant baseline (0.5, 1, 2, 4) x 1e-2 with cuts 20, 40, 50.
    M2: Weibull baseline, hazard (mu/kappa)(t/kappa)^(mu-1), mu=8, kappa=50.

Scenarios
    S1: visit-process censoring only.
    S2: each subject exact with probability 0.18, otherwise as S1.
    S3/S4: logistic cure fraction with X = (1, Bernoulli(0.8)) on top of S2.

Visits are V1 ~ U[0, 60] and V2 = V1 + U[0, 120]; ``T < V1`` is left
censored on (0, V1], ``T > V2`` right censored at V2, anything else is
interval censored on (V1, V2].  Cured subjects are right censored at V2.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import trapezoid

from .inference import lr_confint, polish
from .model import CensorClass, CutGrid, ModelError, ModelParams, SurvivalData, expit, survival
from .mstep import FitConfig, FitResult, em_fit
from .ridge import PathConfig, regularization_path

log = logging.getLogger(__name__)

BETA_TRUE = np.array([math.log(2.0), math.log(0.8)])
M1_CUTS = np.array([20.0, 40.0, 50.0])
M1_RATES = np.array([0.5, 1.0, 2.0, 4.0]) * 1e-2
WEIBULL_SHAPE = 8.0
WEIBULL_SCALE = 50.0
GAMMA_TRUE = {
    "S3": np.array([math.log(2.35), math.log(2.0)]),
    "S4": np.array([math.log(0.8), math.log(2.0)]),
}
EXACT_FRACTION = 0.18
STUDY_GRID = CutGrid.regular(10.0, 90.0, 5.0)

MODELS = ("M1", "M2")
SCENARIOS = ("S1", "S2", "S3", "S4")


@dataclass(frozen=True)
class ScenarioSpec:
    """One simulation design.

    ``cure_p`` adds a covariate-free cure fraction with susceptible
    probability ``cure_p`` (used for the cure sensitivity/specificity runs).
    """

    model: str = "M1"
    scenario: str = "S1"
    n: int = 400
    seed: int = 0
    cure_p: Optional[float] = None

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"unknown model {self.model!r}; expected one of {MODELS}")
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}; expected one of {SCENARIOS}")
        if self.n < 1:
            raise ValueError("n must be >= 1")

    def replicate(self, m: int) -> "ScenarioSpec":
        """Spec of replicate ``m`` with a seed derived from ``(seed, m)``."""
        seq = np.random.SeedSequence([self.seed, m])
        return ScenarioSpec(self.model, self.scenario, self.n, int(seq.generate_state(1, np.uint64)[0]), self.cure_p)


def true_params() -> ModelParams:
    return ModelParams(np.log(M1_RATES), BETA_TRUE.copy())


def true_grid() -> CutGrid:
    return CutGrid(M1_CUTS)


def baseline_cumhaz(model: str, t):
    t = np.asarray(t, dtype=float)
    if model == "M1":
        lower = np.concatenate([[0.0], M1_CUTS])
        upper = np.concatenate([M1_CUTS, [np.inf]])
        expo = np.clip(np.minimum(t[..., None], upper) - lower, 0.0, None)
        return expo @ M1_RATES
    return (t / WEIBULL_SCALE) ** WEIBULL_SHAPE


def baseline_survival(model: str, t):
    return np.exp(-baseline_cumhaz(model, t))


def baseline_hazard(model: str, t):
    t = np.asarray(t, dtype=float)
    if model == "M1":
        return M1_RATES[np.searchsorted(M1_CUTS, t, side="left")]
    return (WEIBULL_SHAPE / WEIBULL_SCALE) * (t / WEIBULL_SCALE) ** (WEIBULL_SHAPE - 1)


def inverse_cumhaz(model: str, target):
    """Time at which the baseline cumulative hazard reaches ``target``."""
    target = np.asarray(target, dtype=float)
    if model == "M2":
        return WEIBULL_SCALE * target ** (1.0 / WEIBULL_SHAPE)
    lower = np.concatenate([[0.0], M1_CUTS])
    at_lower = np.concatenate([[0.0], np.cumsum(M1_RATES[:-1] * np.diff(lower))])
    k = np.searchsorted(at_lower, target, side="right") - 1
    return lower[k] + (target - at_lower[k]) / M1_RATES[k]


def sample_event_times(model: str, z, rng: np.random.Generator):
    """Event times by inversion: ``Lambda_0(T) exp(beta z) = E``, ``E ~ Exp(1)``."""
    e = rng.exponential(size=z.shape[0])
    return inverse_cumhaz(model, e * np.exp(-(z @ BETA_TRUE)))


def gen_scenario(spec: ScenarioSpec) -> SurvivalData:
    """Draw one dataset; identical ``spec`` gives a bitwise-identical result."""
    rng = np.random.default_rng(spec.seed)
    n = spec.n
    z = np.column_stack([rng.binomial(1, 0.6, n).astype(float), rng.uniform(0.0, 2.0, n)])
    t = sample_event_times(spec.model, z, rng)
    v1 = rng.uniform(0.0, 60.0, n)
    v2 = v1 + rng.uniform(0.0, 120.0, n)
    exact = np.zeros(n, dtype=bool)
    if spec.scenario != "S1":
        exact = rng.uniform(size=n) < EXACT_FRACTION
    x = None
    susceptible = np.ones(n, dtype=bool)
    if spec.scenario in ("S3", "S4"):
        x = np.column_stack([np.ones(n), rng.binomial(1, 0.8, n).astype(float)])
        susceptible = rng.uniform(size=n) < expit(x @ GAMMA_TRUE[spec.scenario])
    elif spec.cure_p is not None:
        susceptible = rng.uniform(size=n) < spec.cure_p

    left = np.where(t < v1, 0.0, np.where(t > v2, v2, v1))
    right = np.where(t < v1, v1, np.where(t > v2, np.inf, v2))
    left = np.where(exact, t, left)
    right = np.where(exact, t, right)
    left = np.where(susceptible, left, v2)
    right = np.where(susceptible, right, np.inf)
    return SurvivalData(left, right, z, x, ["z_1", "z_2"], None if x is None else ["x_1", "x_2"])


# estimators ----------------------------------------------------------------


def midpoint_data(data: SurvivalData) -> SurvivalData:
    """Replace left- and interval-censored rows by exact times at ``(L + R) / 2``."""
    cls = data.censor_class
    mid = (cls == CensorClass.LEFT) | (cls == CensorClass.INTERVAL)
    t = np.where(mid, 0.5 * (data.left + data.right), data.left)
    right = np.where(mid, t, data.right)
    return SurvivalData(t, right, data.z, data.x, data.z_names, data.x_names)


def midpoint_fit(data: SurvivalData, config: Optional[FitConfig] = None, grid: CutGrid = STUDY_GRID) -> FitResult:
    """Fit the imputed-midpoint data on the fixed fine grid."""
    return em_fit(midpoint_data(data), grid, config)


@dataclass
class StudyConfig:
    """Settings shared by every replicate of a study."""

    grid: CutGrid = STUDY_GRID
    penalties: Optional[np.ndarray] = None
    path: PathConfig = field(default_factory=PathConfig)
    fit: FitConfig = field(default_factory=FitConfig)
    alpha: float = 0.05
    compute_ci: bool = True
    s0_window: tuple = (0.0, 60.0)
    s0_step: float = 0.1
    tv_window: float = 90.0
    cut_windows: tuple = ((10.0, 30.0), (35.0, 55.0))
    threads: int = 1
    max_fail_fraction: float = 0.1
    # "auto" follows the scenario; None / "scalar" / "logistic" force the model
    cure: Optional[str] = "auto"


@dataclass
class Estimate:
    """What an estimator returns for one replicate."""

    params: ModelParams
    grid: CutGrid
    beta_ci: Optional[np.ndarray] = None  # (d, 2)
    converged: bool = True


def _cure_kind(spec: ScenarioSpec, cfg: Optional[StudyConfig] = None) -> Optional[str]:
    if cfg is not None and cfg.cure != "auto":
        return cfg.cure
    if spec.scenario in ("S3", "S4"):
        return "logistic"
    if spec.cure_p is not None:
        return "scalar"
    return None


def _with_ci(fit: FitResult, data: SurvivalData, cfg: StudyConfig) -> Estimate:
    ci = None
    if cfg.compute_ci:
        fit = polish(fit, data)
        K = fit.grid.K
        ci = np.array(
            [
                [iv.lower, iv.upper]
                for iv in (lr_confint(data, fit.grid, fit, K + j, cfg.alpha) for j in range(data.d_z))
            ]
        )
    return Estimate(fit.params, fit.grid, ci, fit.converged)


def adaptive_ridge_estimator(data: SurvivalData, spec: ScenarioSpec, cfg: StudyConfig) -> Estimate:
    cure = _cure_kind(spec, cfg)
    path = regularization_path(data, cfg.grid, cfg.penalties, cfg.path, cure=cure)
    return _with_ci(path.best.refit, data, cfg)


def midpoint_estimator(data: SurvivalData, spec: ScenarioSpec, cfg: StudyConfig) -> Estimate:
    mdata = midpoint_data(data)
    fit = em_fit(mdata, cfg.grid, cfg.fit, cure=_cure_kind(spec, cfg))
    return _with_ci(fit, mdata, cfg)


def true_cuts_estimator(data: SurvivalData, spec: ScenarioSpec, cfg: StudyConfig) -> Estimate:
    fit = em_fit(data, true_grid(), cfg.fit, cure=_cure_kind(spec, cfg))
    return _with_ci(fit, data, cfg)


ESTIMATORS = {
    "adaptive_ridge": adaptive_ridge_estimator,
    "midpoint": midpoint_estimator,
    "true_cuts": true_cuts_estimator,
}


# metrics -------------------------------------------------------------------


def _time_grid(cfg: StudyConfig) -> np.ndarray:
    lo, hi = cfg.s0_window
    return np.linspace(lo, hi, int(round((hi - lo) / cfg.s0_step)) + 1)


def total_variation(params: ModelParams, grid: CutGrid, upper: float = 90.0) -> float:
    """``sum |exp(a_hat) - lambda_0|`` weighted by length over ``(0, upper]``.

    Both step functions are compared on the union of their cuts, so the
    estimate may use any grid.
    """
    cuts = np.union1d(grid.interior, M1_CUTS)
    cuts = cuts[cuts < upper]
    edges = np.concatenate([[0.0], cuts, [upper]])
    mids = 0.5 * (edges[:-1] + edges[1:])
    est = np.exp(params.log_hazard[grid.piece_index(mids)])
    true = M1_RATES[np.searchsorted(M1_CUTS, mids, side="left")]
    return float(np.sum(np.diff(edges) * np.abs(est - true)))


@dataclass
class Replicate:
    index: int
    beta: np.ndarray
    beta_ci: Optional[np.ndarray]
    s0: np.ndarray
    cuts: np.ndarray
    tv: float
    cure: Optional[np.ndarray]
    converged: bool


def _count_hist(values) -> dict:
    vals, counts = np.unique(np.asarray(values, dtype=int), return_counts=True)
    return {int(v): int(c) for v, c in zip(vals, counts)}


@dataclass
class MetricReport:
    """Monte Carlo summary of one estimator.

    ``se`` uses the ``M - 1`` denominator, so ``mse = bias^2 + se^2 (M - 1) / M``;
    ``ivar`` uses ``1 / M`` so that ``mise = ibias2 + ivar`` exactly.
    """

    estimator: str
    M: int
    n_failed: int
    bias: np.ndarray
    se: np.ndarray
    mse: np.ndarray
    cp: np.ndarray
    ibias2: float
    ivar: float
    mise: float
    tv: float
    cut_counts: dict
    window_counts: dict
    cure_mean: Optional[np.ndarray] = None
    replicates: list = field(default_factory=list, repr=False)

    @classmethod
    def from_replicates(cls, name, reps, n_failed, spec: ScenarioSpec, cfg: StudyConfig):
        M = len(reps)
        if M == 0:
            raise FloatingPointError(f"no successful replicate for {name}")
        betas = np.vstack([r.beta for r in reps])
        err = betas - BETA_TRUE
        bias = err.mean(axis=0)
        se = betas.std(axis=0, ddof=1) if M > 1 else np.full(betas.shape[1], np.nan)
        mse = np.mean(err**2, axis=0)
        if all(r.beta_ci is not None for r in reps):
            lo = np.vstack([r.beta_ci[:, 0] for r in reps])
            hi = np.vstack([r.beta_ci[:, 1] for r in reps])
            cp = np.mean((lo <= BETA_TRUE) & (BETA_TRUE <= hi), axis=0)
        else:
            cp = np.full(betas.shape[1], np.nan)
        t = _time_grid(cfg)
        s_true = baseline_survival(spec.model, t)
        S = np.vstack([r.s0 for r in reps])
        mean_s = S.mean(axis=0)
        ibias2 = float(trapezoid((mean_s - s_true) ** 2, t))
        ivar = float(np.mean(trapezoid((S - mean_s) ** 2, t, axis=1)))
        mise = float(np.mean(trapezoid((S - s_true) ** 2, t, axis=1)))
        tv = float(np.mean([r.tv for r in reps])) if spec.model == "M1" else float("nan")
        windows = {}
        for lo_w, hi_w in cfg.cut_windows:
            counts = [int(np.sum((r.cuts >= lo_w) & (r.cuts <= hi_w))) for r in reps]
            windows[(lo_w, hi_w)] = _count_hist(counts)
        cures = [r.cure for r in reps if r.cure is not None]
        return cls(
            estimator=name,
            M=M,
            n_failed=n_failed,
            bias=bias,
            se=se,
            mse=mse,
            cp=cp,
            ibias2=ibias2,
            ivar=ivar,
            mise=mise,
            tv=tv,
            cut_counts=_count_hist([r.cuts.size for r in reps]),
            window_counts=windows,
            cure_mean=np.mean(np.vstack(cures), axis=0) if cures else None,
            replicates=list(reps),
        )

    def fraction_with_cut(self, window) -> float:
        hist = self.window_counts[tuple(window)]
        return sum(c for k, c in hist.items() if k >= 1) / self.M

    def modal_cut_count(self) -> int:
        return max(self.cut_counts.items(), key=lambda kv: (kv[1], -kv[0]))[0]


class StudyAborted(RuntimeError):
    pass


def _run_replicate(args):
    spec, m, names, estimators, cfg = args
    rspec = spec.replicate(m)
    data = gen_scenario(rspec)
    t = _time_grid(cfg)
    out = {}
    for name, est in zip(names, estimators):
        try:
            e = est(data, rspec, cfg)
            z0 = np.zeros(e.params.d_z)
            cure = None
            if e.params.cure is not None:
                cure = np.atleast_1d(e.params.vector()[e.params.K + e.params.d_z:])
            out[name] = Replicate(
                index=m,
                beta=e.params.beta.copy(),
                beta_ci=e.beta_ci,
                s0=np.atleast_1d(survival(t, z0, e.params, e.grid)),
                cuts=e.grid.interior.copy(),
                tv=total_variation(e.params, e.grid, cfg.tv_window),
                cure=cure,
                converged=e.converged,
            )
        except (FloatingPointError, ArithmeticError, ModelError, np.linalg.LinAlgError) as exc:
            log.warning("replicate %d failed for %s: %s", m, name, exc)
            out[name] = None
    return out


def run_study(
    spec: ScenarioSpec,
    M: int,
    estimators: Sequence = ("adaptive_ridge",),
    config: Optional[StudyConfig] = None,
    progress: Optional[Callable[[int], None]] = None,
) -> dict:
    """Monte Carlo study; returns ``{estimator name: MetricReport}``.

    Estimators are names from ``ESTIMATORS`` or ``(name, callable)`` pairs with
    the signature ``f(data, spec, config) -> Estimate``.  Replicate ``m`` uses
    the dataset ``gen_scenario(spec.replicate(m))`` whatever the thread count.
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    cfg = config or StudyConfig()
    names, funcs = [], []
    for e in estimators:
        if isinstance(e, str):
            if e not in ESTIMATORS:
                raise ValueError(f"unknown estimator {e!r}; expected one of {sorted(ESTIMATORS)}")
            names.append(e)
            funcs.append(ESTIMATORS[e])
        else:
            names.append(e[0])
            funcs.append(e[1])
    jobs = [(spec, m, names, funcs, cfg) for m in range(M)]
    if cfg.threads > 1:
        with ProcessPoolExecutor(max_workers=cfg.threads) as pool:
            results = []
            for r in pool.map(_run_replicate, jobs):
                results.append(r)
                if progress:
                    progress(len(results))
    else:
        results = []
        for job in jobs:
            results.append(_run_replicate(job))
            if progress:
                progress(len(results))
    reports = {}
    for name in names:
        reps = [r[name] for r in results if r[name] is not None]
        failed = M - len(reps)
        if failed > cfg.max_fail_fraction * M:
            raise StudyAborted(f"{failed} of {M} replicates failed for {name}")
        reports[name] = MetricReport.from_replicates(name, reps, failed, spec, cfg)
    return reports


def _fmt(x, digits=5) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "NA"
    return f"{x:.{digits}f}"


def format_report(reports: dict, spec: ScenarioSpec) -> str:
    """Plain-text tables: beta metrics, survival/hazard metrics, cut detection."""
    lines = [f"# model={spec.model} scenario={spec.scenario} n={spec.n} seed={spec.seed}"]
    lines.append("estimator\tparameter\tbias\tse\tmse\tcp")
    for name, r in reports.items():
        for j in range(r.bias.size):
            lines.append(
                f"{name}\tbeta_{j + 1}\t{_fmt(r.bias[j])}\t{_fmt(r.se[j])}\t{_fmt(r.mse[j])}\t{_fmt(r.cp[j], 3)}"
            )
    lines.append("")
    lines.append("estimator\tM\tfailed\tibias2\tivar\tmise\ttv")
    for name, r in reports.items():
        lines.append(
            f"{name}\t{r.M}\t{r.n_failed}\t{_fmt(r.ibias2)}\t{_fmt(r.ivar)}\t{_fmt(r.mise)}\t{_fmt(r.tv)}"
        )
    lines.append("")
    lines.append("estimator\ttable\tcount\tfrequency")
    for name, r in reports.items():
        for k, c in sorted(r.cut_counts.items()):
            lines.append(f"{name}\tcuts\t{k}\t{c / r.M:.3f}")
        for (lo, hi), hist in r.window_counts.items():
            for k, c in sorted(hist.items()):
                lines.append(f"{name}\tcuts_in_[{lo:g},{hi:g}]\t{k}\t{c / r.M:.3f}")
        if r.cure_mean is not None:
            lines.append(f"{name}\tcure_mean\t" + ",".join(_fmt(v) for v in r.cure_mean) + "\t")
    return "\n".join(lines) + "\n"


def replicate_records(reports: dict) -> list:
    """Per-replicate rows for machine-readable output."""
    rows = []
    for name, r in reports.items():
        for rep in r.replicates:
            rows.append(
                {
                    "estimator": name,
                    "replicate": rep.index,
                    "beta": rep.beta.tolist(),
                    "beta_ci": None if rep.beta_ci is None else rep.beta_ci.tolist(),
                    "cuts": rep.cuts.tolist(),
                    "tv": rep.tv,
                    "cure": None if rep.cure is None else rep.cure.tolist(),
                    "converged": rep.converged,
                }
            )
    return rows
