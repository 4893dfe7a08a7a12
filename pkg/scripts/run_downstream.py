#!/usr/bin/env python3
"""Downstream goal task: meta-controllers over frozen aligned vs unaligned skills.

Trains random-start skill runs at alpha 0 and 0.2, a meta-controller over
each, and reports goal rate and mean hazard cost.
"""

import argparse
import statistics

from hasd.experiments import downstream_batch, run_many, train_job


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--preset", default="test", choices=("test", "desk", "paper"))
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--meta-steps", type=int, default=20_000)
    ap.add_argument("--goals", type=int, default=200)
    ap.add_argument("--workers", type=int, default=None)
    args = ap.parse_args()
    seeds = tuple(int(s) for s in args.seeds.split(","))

    skill_runs = {}
    for alpha, mode in ((0.0, "lsd"), (0.2, "hasd")):
        jobs = [train_job(mode, seed, {"env.random_start": "true"}, 256, args.preset)
                for seed in seeds]
        skill_runs[alpha] = run_many(jobs, args.workers)

    train_kw = None
    if args.preset == "test":
        train_kw = {"--hidden": "64,64", "--batch": "128", "--learning-starts": "500",
                    "--lr-critic": "1e-3", "--lr-actor": "3e-4"}
    results = downstream_batch(skill_runs, steps=args.meta_steps, goals=args.goals,
                               workers=args.workers, train_kw=train_kw)
    for alpha, rows in sorted(results.items()):
        for i, (rate, cost) in enumerate(rows):
            print(f"alpha={alpha} seed={i}: goal_rate={rate:.1f}% cost={cost:.2f}")
        print(f"  median: rate={statistics.median(r for r, _ in rows):.1f}% "
              f"cost={statistics.median(c for _, c in rows):.2f}")


if __name__ == "__main__":
    main()
