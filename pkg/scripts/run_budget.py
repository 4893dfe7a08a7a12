#!/usr/bin/env python3
"""Feedback-budget sensitivity: alpha-conditioned runs at several budgets.

Prints per-run hypervolumes (batch-wide normalization) and per-budget
medians; lower budgets should shrink the dominated area.
"""

import argparse
import statistics

from hasd.experiments import budget_batch, normalized_hypervolumes


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--preset", default="test", choices=("test", "desk", "paper"))
    ap.add_argument("--budgets", default="40,320,1280")
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--eval-skills", type=int, default=256)
    ap.add_argument("--workers", type=int, default=None)
    args = ap.parse_args()
    budgets = tuple(int(b) for b in args.budgets.split(","))
    seeds = tuple(int(s) for s in args.seeds.split(","))
    runs = budget_batch(budgets, seeds, preset=args.preset,
                        eval_skills=args.eval_skills, workers=args.workers)
    hvs = normalized_hypervolumes(runs)
    for budget in budgets:
        vals = ", ".join(f"{v:.4f}" for v in hvs[budget])
        print(f"budget={budget}: HV per seed [{vals}] median={statistics.median(hvs[budget]):.4f}")


if __name__ == "__main__":
    main()
