"""Command-line interface: ``pchazard {fit,path,bootstrap,simulate}``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .estep import DegenerateIntervalError
from .inference import (
    BootstrapConfig,
    bootstrap_ci,
    lr_confint,
    lr_test,
    parameter_functional,
    polish,
    survival_functional,
)
from .io import DataFileError, read_data, write_data, write_json, write_table
from .model import CutGrid, ModelError, ScalarCure, LogisticCure
from .mstep import FitConfig, em_fit
from .ridge import PathConfig, regularization_path
from .simulation import (
    ESTIMATORS,
    MODELS,
    SCENARIOS,
    ScenarioSpec,
    StudyAborted,
    StudyConfig,
    format_report,
    gen_scenario,
    replicate_records,
    run_study,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("pchazard")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def parse_grid(spec: Optional[str], cuts: Optional[str]) -> CutGrid:
    """``--grid min:max:step`` or ``--cuts c1,c2,...`` (``none`` for no cut)."""
    if spec and cuts:
        raise UsageError("give either --grid or --cuts, not both")
    if cuts is not None:
        if cuts.strip().lower() in ("", "none"):
            return CutGrid([])
        try:
            values = [float(c) for c in cuts.split(",")]
        except ValueError:
            raise UsageError(f"bad --cuts value {cuts!r}") from None
        try:
            return CutGrid(sorted(values))
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    if spec is None:
        return CutGrid.regular(10.0, 90.0, 5.0)
    try:
        lo, hi, step = (float(p) for p in spec.split(":"))
    except ValueError:
        raise UsageError(f"--grid expects min:max:step, got {spec!r}") from None
    if not (0 < lo <= hi and step > 0):
        raise UsageError("--grid needs 0 < min <= max and step > 0")
    return CutGrid.regular(lo, hi, step)


def parse_penalties(spec: str) -> np.ndarray:
    """``min:max:count`` with log-equal spacing."""
    try:
        lo, hi, count = spec.split(":")
        lo, hi, count = float(lo), float(hi), int(count)
    except ValueError:
        raise UsageError(f"--penalties expects min:max:count, got {spec!r}") from None
    if lo <= 0 or hi < lo or count < 1:
        raise UsageError("--penalties needs 0 < min <= max and count >= 1")
    if count == 1:
        return np.array([lo])
    return np.exp(np.linspace(math.log(lo), math.log(hi), count))


def _cure_arg(value: str):
    return None if value == "none" else value


def _piece_label(lo, hi) -> str:
    return f"({lo:g}, {hi:g}]" if math.isfinite(hi) else f"({lo:g}, inf)"


def _fit_pipeline(data, grid, args):
    """Selection (unless fixed) followed by the final fit; returns (fit, path or None)."""
    cure = _cure_arg(args.cure)
    if cure == "logistic" and data.x is None:
        raise ModelError("--cure logistic needs x_* columns in the data file")
    path = None
    if args.fixed_cuts or grid.K < 2:
        fit = em_fit(data, grid, FitConfig(), cure=cure)
    else:
        path = regularization_path(data, grid, parse_penalties(args.penalties), PathConfig(), cure=cure)
        fit = path.best.refit
    return polish(fit, data), path


def _path_summary(path) -> list:
    rows = []
    for i in path.distinct():
        e = path.entries[i]
        pens = [x.pen for x in path.entries if tuple(x.selected_cuts.interior) == tuple(e.selected_cuts.interior)]
        rows.append(
            {
                "pen_min": min(pens),
                "pen_max": max(pens),
                "cuts": e.selected_cuts.interior,
                "m": e.m,
                "loglik": e.loglik,
                "bic": e.bic,
                "best": i == path.best_index,
            }
        )
    return rows


def cmd_fit(args) -> int:
    data = read_data(args.data)
    grid = parse_grid(args.grid, args.cuts)
    fit, path = _fit_pipeline(data, grid, args)
    params, sel = fit.params, fit.grid
    K = sel.K
    baseline = []
    for k in range(K):
        row = {
            "piece": _piece_label(sel.lower[k], sel.upper[k]),
            "lower": sel.lower[k],
            "upper": sel.upper[k],
            "log_hazard": params.log_hazard[k],
            "hazard": math.exp(params.log_hazard[k]),
            "pinned": bool(fit.pinned[k]) if fit.pinned is not None else False,
        }
        if not args.no_ci:
            ci = lr_confint(data, sel, fit, k, args.alpha)
            row.update(ci_lower=math.exp(ci.lower), ci_upper=math.exp(ci.upper), ci_flags=ci.flags)
        baseline.append(row)
    coefs = []
    names = data.z_names or [f"z_{j + 1}" for j in range(data.d_z)]
    for j in range(data.d_z):
        b = params.beta[j]
        row = {"name": names[j], "beta": b, "hazard_ratio": math.exp(b)}
        if not args.no_ci:
            ci = lr_confint(data, sel, fit, K + j, args.alpha)
            test = lr_test(data, sel, fit, {K + j: 0.0})
            row.update(
                ci_lower=ci.lower,
                ci_upper=ci.upper,
                hr_ci_lower=math.exp(ci.lower),
                hr_ci_upper=math.exp(ci.upper),
                lr_stat=test.stat,
                p_value=test.p_value,
                ci_flags=ci.flags + test.flags,
            )
        coefs.append(row)
    cure = None
    if isinstance(params.cure, ScalarCure):
        cure = {"type": "scalar", "p": params.cure.p}
    elif isinstance(params.cure, LogisticCure):
        cure = {"type": "logistic", "names": data.x_names, "gamma": params.cure.gamma}
    doc = {
        "command": "fit",
        "data": {"path": str(args.data), "n": data.n, "classes": data.class_counts()},
        "settings": {
            "grid": grid.interior,
            "fixed_cuts": bool(args.fixed_cuts or grid.K < 2),
            "penalties": args.penalties,
            "cure": args.cure,
            "alpha": args.alpha,
            "seed": args.seed,
        },
        "selected_cuts": sel.interior,
        "baseline": baseline,
        "coefficients": coefs,
        "cure": cure,
        "loglik": fit.obs_loglik,
        "n_params": fit.n_params,
        "bic": -2 * fit.obs_loglik + fit.n_params * math.log(data.n),
        "convergence": {"converged": fit.converged, "n_em_iters": fit.n_em_iters, "flags": fit.flags},
        "path": _path_summary(path) if path is not None else None,
    }
    if args.output:
        write_json(doc, args.output)
    _print_fit(doc)
    return EXIT_OK


def _print_fit(doc):
    out = sys.stdout
    out.write(f"selected cuts: {list(map(float, doc['selected_cuts']))}\n")
    out.write("piece\thazard\tci_lower\tci_upper\n")
    for r in doc["baseline"]:
        out.write(f"{r['piece']}\t{r['hazard']:.6g}\t{r.get('ci_lower', float('nan')):.6g}\t{r.get('ci_upper', float('nan')):.6g}\n")
    if doc["coefficients"]:
        out.write("covariate\tbeta\tHR\tci_lower\tci_upper\tp_value\n")
        for r in doc["coefficients"]:
            out.write(
                f"{r['name']}\t{r['beta']:.6g}\t{r['hazard_ratio']:.6g}\t"
                f"{r.get('hr_ci_lower', float('nan')):.6g}\t{r.get('hr_ci_upper', float('nan')):.6g}\t"
                f"{r.get('p_value', float('nan')):.4g}\n"
            )
    out.write(f"loglik {doc['loglik']:.6f}  BIC {doc['bic']:.6f}\n")


def cmd_path(args) -> int:
    data = read_data(args.data)
    grid = parse_grid(args.grid, args.cuts)
    if grid.K < 2:
        raise UsageError("the path needs at least one interior cut")
    path = regularization_path(
        data,
        grid,
        parse_penalties(args.penalties),
        PathConfig(warm_start=not args.cold_start),
        cure=_cure_arg(args.cure),
    )
    rows = path.records()
    for r in rows:
        r["best"] = int(r["pen"] == path.best.pen)
    if args.output:
        write_table(rows, args.output)
    else:
        sys.stdout.write("pen\tncuts\tm\tloglik\tbic\n")
        for r in rows:
            sys.stdout.write(f"{r['pen']:.6g}\t{len(r['cuts'])}\t{r['m']}\t{r['loglik']:.6f}\t{r['bic']:.6f}\n")
    best = path.best
    sys.stderr.write(f"best: cuts {best.selected_cuts.interior.tolist()} BIC {best.bic:.6f}\n")
    return EXIT_OK


def cmd_bootstrap(args) -> int:
    data = read_data(args.data)
    grid = parse_grid(args.grid, args.cuts)
    mode = "fixed" if args.fixed_cuts or grid.K < 2 else "path"
    cfg = BootstrapConfig(
        grid=grid,
        mode=mode,
        penalties=parse_penalties(args.penalties),
        cure=_cure_arg(args.cure),
        alpha=args.alpha,
        threads=args.threads,
    )
    if args.functional == "survival":
        lo, hi, step = (float(v) for v in args.times.split(":"))
        times = np.arange(lo, hi + 0.5 * step, step)
        functional = survival_functional(times)
        labels = [f"S0({t:g})" for t in times]
    else:
        functional = parameter_functional("beta")
        labels = data.z_names or [f"z_{j + 1}" for j in range(data.d_z)]
    bands = bootstrap_ci(data, cfg, functional, args.B, args.seed)
    doc = {
        "command": "bootstrap",
        "settings": {"B": args.B, "seed": args.seed, "alpha": args.alpha, "mode": mode, "functional": args.functional},
        "labels": labels,
        "point": bands.point,
        "lower": bands.lower,
        "upper": bands.upper,
        "n_failed": bands.n_failed,
    }
    if args.output:
        write_json(doc, args.output)
    sys.stdout.write("quantity\tpoint\tlower\tupper\n")
    for lab, p, lo_, hi_ in zip(labels, bands.point, bands.lower, bands.upper):
        sys.stdout.write(f"{lab}\t{p:.6g}\t{lo_:.6g}\t{hi_:.6g}\n")
    return EXIT_OK


def cmd_simulate(args) -> int:
    spec = ScenarioSpec(args.model, args.scenario, args.n, args.seed, args.cure_p)
    if args.data_out:
        write_data(gen_scenario(spec), args.data_out)
    if args.reps == 0:
        return EXIT_OK
    estimators = [e.strip() for e in args.estimators.split(",") if e.strip()]
    unknown = [e for e in estimators if e not in ESTIMATORS]
    if unknown:
        raise UsageError(f"unknown estimators {unknown}; choose from {sorted(ESTIMATORS)}")
    cfg = StudyConfig(compute_ci=not args.no_ci, threads=args.threads)
    reports = run_study(spec, args.reps, estimators, cfg)
    text = format_report(reports, spec)
    sys.stdout.write(text)
    if args.output:
        prefix = Path(args.output)
        prefix.parent.mkdir(parents=True, exist_ok=True)
        Path(f"{prefix}.report.txt").write_text(text)
        settings = {k: v for k, v in vars(args).items() if k not in ("func", "output", "data_out")}
        write_json({"spec": settings, "replicates": replicate_records(reports)}, f"{prefix}.records.json")
    return EXIT_OK


def _add_grid_args(p):
    p.add_argument("data", help="delimited data file (left,right,z_*,x_*)")
    p.add_argument("--grid", help="candidate cuts as min:max:step (default 10:90:5)")
    p.add_argument("--cuts", help="explicit cuts c1,c2,... or 'none'")
    p.add_argument("--penalties", default="0.1:10000:200", help="min:max:count, log-spaced")
    p.add_argument("--cure", choices=("none", "scalar", "logistic"), default="none")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("-o", "--output", help="output file")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pchazard", description="Piecewise-constant hazard models for interval-censored data.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("fit", help="select cuts, fit, and report LR intervals")
    _add_grid_args(p)
    p.add_argument("--fixed-cuts", action="store_true", help="skip selection and fit on the given cuts")
    p.add_argument("--no-ci", action="store_true", help="skip likelihood-ratio intervals")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("path", help="emit the full regularization path")
    _add_grid_args(p)
    p.add_argument("--cold-start", action="store_true")
    p.set_defaults(func=cmd_path)

    p = sub.add_parser("bootstrap", help="percentile bootstrap bands")
    _add_grid_args(p)
    p.add_argument("--fixed-cuts", action="store_true")
    p.add_argument("--B", type=int, default=200)
    p.add_argument("--functional", choices=("survival", "beta"), default="survival")
    p.add_argument("--times", default="0:60:5", help="survival times as min:max:step")
    p.set_defaults(func=cmd_bootstrap)

    p = sub.add_parser("simulate", help="Monte Carlo study and/or simulated data")
    p.add_argument("--model", choices=MODELS, default="M1")
    p.add_argument("--scenario", choices=SCENARIOS, default="S1")
    p.add_argument("--n", type=int, default=400)
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cure-p", type=float, default=None, help="constant susceptible fraction")
    p.add_argument("--estimators", default="adaptive_ridge,midpoint")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--no-ci", action="store_true")
    p.add_argument("--data-out", help="write the dataset drawn with --seed to this file")
    p.add_argument("-o", "--output", help="prefix for report and record files")
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    if getattr(args, "n", 1) < 1 or getattr(args, "reps", 0) < 0 or getattr(args, "B", 2) < 2:
        sys.stderr.write("pchazard: error: --n must be >= 1, --reps >= 0, --B >= 2\n")
        return EXIT_USAGE
    if not 0 < getattr(args, "alpha", 0.05) <= 1:
        sys.stderr.write("pchazard: error: --alpha must be in (0, 1]\n")
        return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        sys.stderr.write(f"pchazard: error: {exc}\n")
        return EXIT_USAGE
    except (DataFileError, ModelError, FileNotFoundError, IsADirectoryError) as exc:
        sys.stderr.write(f"pchazard: data error: {exc}\n")
        return EXIT_DATA
    except (DegenerateIntervalError, FloatingPointError, np.linalg.LinAlgError, StudyAborted) as exc:
        sys.stderr.write(f"pchazard: numerical failure: {exc}\n")
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
