#!/usr/bin/env python3
"""Fixed-alpha trade-off experiment: alpha in {0, 0.2, 1} across seeds.

Trains (or reuses cached) runs, then prints per-seed solution points and
medians. Preset `test` finishes in minutes; `desk` reproduces the
laptop-scale experiment.
"""

import argparse
import statistics

from hasd.experiments import tradeoff_batch


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--preset", default="test", choices=("test", "desk", "paper"))
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--eval-skills", type=int, default=256)
    ap.add_argument("--workers", type=int, default=None)
    args = ap.parse_args()
    seeds = tuple(int(s) for s in args.seeds.split(","))
    res = tradeoff_batch(seeds, preset=args.preset, eval_skills=args.eval_skills,
                         workers=args.workers)
    print(f"{'alpha':>6} {'seed':>5} {'coverage':>9} {'alignment':>10} {'cost':>7}")
    for alpha, pts in sorted(res.items()):
        for p in pts:
            print(f"{alpha:>6} {p['seed']:>5} {p['coverage_raw']:>9} "
                  f"{p['alignment_raw']:>10.2f} {p['cost']:>7.3f}")
    print("\nmedians:")
    for alpha, pts in sorted(res.items()):
        cov = statistics.median(p["coverage_raw"] for p in pts)
        ali = statistics.median(p["alignment_raw"] for p in pts)
        cost = statistics.median(p["cost"] for p in pts)
        print(f"  alpha={alpha}: coverage={cov} alignment={ali:.2f} cost={cost:.3f}")


if __name__ == "__main__":
    main()
