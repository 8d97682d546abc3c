"""Cut-detection tables: number of selected cuts and cuts found near the true jumps.

Runs the adaptive-ridge estimator only (no intervals) for each sample size.

    python scripts/run_cut_detection.py --n 200 400 1000 --reps 100
"""

import argparse

from pchazard.simulation import ScenarioSpec, StudyConfig, run_study


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, nargs="+", default=[400])
    ap.add_argument("--scenario", default="S1")
    ap.add_argument("--reps", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()

    cfg = StudyConfig(compute_ci=False, threads=args.threads)
    print("n\ttable\tcount\tfrequency")
    for n in args.n:
        r = run_study(ScenarioSpec("M1", args.scenario, n, args.seed), args.reps, ["adaptive_ridge"], cfg)[
            "adaptive_ridge"
        ]
        for k, c in sorted(r.cut_counts.items()):
            print(f"{n}\tcuts\t{k}\t{c / r.M:.3f}")
        for (lo, hi), hist in r.window_counts.items():
            for k, c in sorted(hist.items()):
                print(f"{n}\t[{lo:g},{hi:g}]\t{k}\t{c / r.M:.3f}")
        print(f"{n}\tP(>=1 in [35,55])\t\t{r.fraction_with_cut((35.0, 55.0)):.3f}")


if __name__ == "__main__":
    main()
