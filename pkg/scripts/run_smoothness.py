#!/usr/bin/env python3
"""Empirical smoothness reports for the logistic map and the linear
second-order system.

For each record length, estimates lower bounds on the cost Lipschitz
constant and the gradient Lipschitz constant over a parameter box, then
classifies their growth (bounded / polynomial / exponential).
"""
import argparse

import numpy as np

from msid import (EstimationProblem, SingleShooting, estimate_contraction,
                  gen_linear2nd, gen_logistic, smoothness_report)
from msid.experiments import LINEAR2ND_SETTINGS
from msid.models import LogisticMap, linear_oe_2nd, lower_to_state_space


def builders(model, gen, theta_dim):
    problems = {}

    def problem(n):
        if n not in problems:
            problems[n] = EstimationProblem(model, gen(n),
                                            SingleShooting(optimize_x0=True))
        return problems[n]

    def cost_builder(n):
        prob = problem(n)
        return lambda th: prob.cost(prob.default_point(np.atleast_1d(th)))

    def grad_builder(n):
        prob = problem(n)
        return lambda th: prob.gradient(
            prob.default_point(np.atleast_1d(th)))[:theta_dim]

    def hess_vec_builder(n):
        prob = problem(n)

        def hv(th, v):
            point = prob.default_point(np.atleast_1d(th))
            full = np.zeros_like(point)
            full[:theta_dim] = v
            return prob.gn_hessian_vec(point, full)[:theta_dim]

        return hv

    return cost_builder, grad_builder, hess_vec_builder


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    model = lower_to_state_space(LogisticMap())
    cost_b, grad_b, hv_b = builders(model, lambda n: gen_logistic(n=n), 1)
    contraction = estimate_contraction(model, np.array([3.75]), (0.0, 1.0),
                                       output_box=(0.0, 1.0), seed=args.seed)
    report = smoothness_report(cost_b, grad_b, [10, 20, 40, 80],
                               ([3.6], [3.9]), contraction, seed=args.seed,
                               hess_vec_builder=hv_b)
    print("logistic:", report.regime_v.regime, "rate",
          f"{report.regime_v.rate:.3f};", "gradient constant",
          report.regime_beta.regime, "rate", f"{report.regime_beta.rate:.3f}")

    theta = LINEAR2ND_SETTINGS["a"]
    model = lower_to_state_space(linear_oe_2nd(theta))
    cost_b, grad_b, hv_b = builders(
        model, lambda n: gen_linear2nd("a", seed=args.seed, n=n), 3)
    contraction = estimate_contraction(model, np.asarray(theta), (-3.0, 3.0),
                                       output_box=(-3, 3), input_box=(-3, 3),
                                       seed=args.seed)
    # records start at rest, so short lengths mostly measure the startup
    # transient; the regime check uses stationary lengths
    report = smoothness_report(cost_b, grad_b, [80, 160, 240, 320],
                               ([0.4, -0.3, 1.5], [0.6, -0.1, 2.5]),
                               contraction, seed=args.seed,
                               hess_vec_builder=hv_b)
    print("linear2nd(a):", report.regime_v.regime,
          "estimates", [f"{v:.3g}" for v in report.lipschitz_estimates])


if __name__ == "__main__":
    main()
