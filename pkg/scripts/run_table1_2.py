"""Regression-parameter and baseline-survival study (beta bias/SE/MSE/CP, IBias2/IVar/MISE, TV).

    python scripts/run_table1_2.py --model M1 --scenario S1 --n 400 --reps 100
"""

import argparse
import time
from pathlib import Path

from pchazard.io import write_json
from pchazard.simulation import MODELS, SCENARIOS, ScenarioSpec, StudyConfig, format_report, replicate_records, run_study


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--model", choices=MODELS, default="M1")
    ap.add_argument("--scenario", choices=SCENARIOS, default="S1")
    ap.add_argument("--n", type=int, default=400)
    ap.add_argument("--reps", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--estimators", default="adaptive_ridge,midpoint")
    ap.add_argument("--no-ci", action="store_true")
    ap.add_argument("--out", default="results/table1_2")
    args = ap.parse_args()

    spec = ScenarioSpec(args.model, args.scenario, args.n, args.seed)
    cfg = StudyConfig(compute_ci=not args.no_ci, threads=args.threads)
    t0 = time.perf_counter()
    done = lambda m: print(f"\r{m}/{args.reps}", end="", flush=True)
    reports = run_study(spec, args.reps, args.estimators.split(","), cfg, progress=done)
    print()
    text = format_report(reports, spec) + f"# wall time {time.perf_counter() - t0:.1f}s\n"
    print(text)
    out = Path(f"{args.out}_{args.model}_{args.scenario}_n{args.n}")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.with_suffix(".txt").write_text(text)
    write_json({"spec": vars(args), "replicates": replicate_records(reports)}, out.with_suffix(".json"))


if __name__ == "__main__":
    main()
