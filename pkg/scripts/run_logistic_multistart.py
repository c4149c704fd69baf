#!/usr/bin/env python3
"""Multi-start logistic-map estimation for several interval caps.

Reports, per formulation, how many of 15 uniformly spaced starts recover
theta = 3.78 within 1e-3, plus min/median/max function evaluations.
"""
import argparse

import numpy as np

from msid import (EstimationProblem, MultipleShooting, ShootingPlan,
                  SingleShooting, as_nlp, audited_median, gen_logistic,
                  solve)
from msid.experiments import study_options
from msid.models import LogisticMap, lower_to_state_space


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--n-starts", type=int, default=15)
    args = parser.parse_args()

    dataset = gen_logistic(seed=args.seed)
    model = lower_to_state_space(LogisticMap())
    opts = study_options()
    starts = np.linspace(3.2, 3.9, args.n_starts)

    for label, max_len in (("dm=2", 2), ("dm=5", 5), ("dm=10", 10),
                           ("single", dataset.n)):
        if max_len == dataset.n:
            form = SingleShooting(optimize_x0=True)
        else:
            form = MultipleShooting(ShootingPlan.from_max_len(dataset.n, max_len))
        problem = EstimationProblem(model, dataset, form)
        hits, evals = 0, []
        for theta0 in starts:
            res = solve(as_nlp(problem),
                        problem.default_point(np.array([theta0])), opts)
            hits += abs(res.point[0] - 3.78) < 1e-3
            evals.append(res.n_eval)
        print(f"{label:7s} hits {hits}/{args.n_starts}  evals "
              f"min {min(evals)} median {audited_median(evals):.0f} "
              f"max {max(evals)}")


if __name__ == "__main__":
    main()
