"""Piecewise-constant hazard Cox models for interval-censored data.

EM estimation with exact, left-, interval- and right-censored observations,
an optional cure fraction, adaptive-ridge selection of the cut points, and
likelihood-ratio inference.
"""

__version__ = "0.1.0"

from .model import (  # noqa: E402
    CensorClass,
    CutGrid,
    IntervalObservation,
    LogisticCure,
    ModelError,
    ModelParams,
    ScalarCure,
    SurvivalData,
    cumulative_hazard,
    survival,
)
from .estep import DegenerateIntervalError, e_step  # noqa: E402
from .mstep import FitConfig, FitResult, em_fit  # noqa: E402
from .ridge import PathConfig, PathResult, regularization_path  # noqa: E402
from .inference import (  # noqa: E402
    asymptotic_variance,
    bootstrap_ci,
    lr_confint,
    lr_test,
    observed_loglik,
    observed_score_hessian,
    polish,
)
from .simulation import ScenarioSpec, gen_scenario, midpoint_fit, run_study  # noqa: E402

__all__ = [
    "CensorClass",
    "CutGrid",
    "DegenerateIntervalError",
    "FitConfig",
    "FitResult",
    "IntervalObservation",
    "LogisticCure",
    "ModelError",
    "ModelParams",
    "PathConfig",
    "PathResult",
    "ScalarCure",
    "ScenarioSpec",
    "SurvivalData",
    "asymptotic_variance",
    "bootstrap_ci",
    "cumulative_hazard",
    "e_step",
    "em_fit",
    "gen_scenario",
    "lr_confint",
    "lr_test",
    "midpoint_fit",
    "observed_loglik",
    "observed_score_hessian",
    "polish",
    "regularization_path",
    "run_study",
    "survival",
]
