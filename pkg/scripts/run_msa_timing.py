#!/usr/bin/env python3
"""Cost-evaluation timing: multi-step horizon K versus shooting cap.

Multi-step evaluation cost grows linearly in K (every sample anchors a
K-long window); multiple-shooting evaluation via the single sequential
pass stays flat in the interval cap.
"""
import argparse

from msid import gen_logistic, timing_study
from msid.models import LogisticMap


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--reps", type=int, default=5)
    args = parser.parse_args()

    dataset = gen_logistic(seed=args.seed)
    result = timing_study(LogisticMap(), dataset,
                          k_list=(3, 5, 7, 10, 20),
                          dm_list=(2, 5, 10, 50), reps=args.reps)
    for rec in result.records:
        which = f"K={rec['K']}" if rec["kind"] == "msa" \
            else f"dm={rec['max_len']}"
        print(f"{rec['kind']:17s} {which:6s} {rec['time_per_eval']*1e3:8.3f} ms")
    print("summaries:", {k: round(v, 4) for k, v in result.summaries.items()})


if __name__ == "__main__":
    main()
