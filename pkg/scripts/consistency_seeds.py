"""Spread of the true-cut MLE at large n across seeds, against the Wald standard errors.

Shows how often max_k |a_hat_k - a_k| < 0.1 and |beta_hat - beta| < 0.05 hold.

    python scripts/consistency_seeds.py --n 10000 --seeds 60
"""

import argparse

import numpy as np

from pchazard.inference import asymptotic_variance, polish
from pchazard.mstep import em_fit
from pchazard.simulation import BETA_TRUE, M1_RATES, ScenarioSpec, gen_scenario, true_grid


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=10_000)
    ap.add_argument("--seeds", type=int, default=60)
    args = ap.parse_args()

    err_a, err_b, hits = [], [], 0
    wald = None
    for s in range(args.seeds):
        data = gen_scenario(ScenarioSpec("M1", "S1", args.n, s))
        fit = em_fit(data, true_grid())
        da = fit.params.log_hazard - np.log(M1_RATES)
        db = fit.params.beta - BETA_TRUE
        err_a.append(da)
        err_b.append(db)
        hits += bool(np.max(np.abs(da)) < 0.1 and np.max(np.abs(db)) < 0.05)
        if wald is None:
            wald = np.sqrt(np.diag(asymptotic_variance(polish(fit, data), data).covariance))
    err_a, err_b = np.array(err_a), np.array(err_b)
    np.set_printoptions(precision=4, suppress=True)
    print("a:    mean err", err_a.mean(0), " MC sd", err_a.std(0, ddof=1), " Wald se (seed 0)", wald[:4])
    print("beta: mean err", err_b.mean(0), " MC sd", err_b.std(0, ddof=1), " Wald se (seed 0)", wald[4:])
    print(f"all tolerances met in {hits}/{args.seeds} seeds")


if __name__ == "__main__":
    main()
