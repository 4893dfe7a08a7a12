"""Experiment batches behind the scripts and the acceptance suite.

Runs train/eval/downstream through the CLI in worker subprocesses with a
content-addressed cache: a finished run directory is keyed by its exact
command, and determinism makes reuse sound. Batch helpers assemble the
trade-off, feedback-budget, and downstream comparisons.
"""

from __future__ import annotations

import csv
import hashlib
import os
import subprocess
import sys
from concurrent.futures import ThreadPoolExecutor

DEFAULT_CACHE = os.path.join(os.path.dirname(os.path.dirname(os.path.dirname(__file__))), ".cache")


def cache_root() -> str:
    return os.environ.get("HASD_CACHE", DEFAULT_CACHE)


def _cli(*args: str) -> list[str]:
    return [sys.executable, "-m", "hasd.cli", *args]


def run_key(args: list[str]) -> str:
    return hashlib.sha256(" ".join(args).encode()).hexdigest()[:16]


def run_cached(args: list[str], done_file: str, tag: str) -> str:
    """Run a CLI command once; `done_file` inside the run dir marks success."""
    out_dir = os.path.join(cache_root(), f"{tag}-{run_key(args)}")
    marker = os.path.join(out_dir, done_file)
    if os.path.exists(marker):
        return out_dir
    env = dict(os.environ)
    env.setdefault("OPENBLAS_NUM_THREADS", "1")
    env.setdefault("OMP_NUM_THREADS", "1")
    full = _cli(*args, "--out", out_dir)
    proc = subprocess.run(full, capture_output=True, text=True, env=env)
    if proc.returncode != 0:
        raise RuntimeError(
            f"command failed ({proc.returncode}): {' '.join(full)}\n{proc.stdout}\n{proc.stderr}"
        )
    if not os.path.exists(marker):
        raise RuntimeError(f"command left no {done_file} in {out_dir}")
    return out_dir


def run_many(jobs: list[tuple[list[str], str, str]], workers: int | None = None) -> list[str]:
    """Run (args, done_file, tag) jobs with bounded parallelism."""
    workers = workers or max(1, (os.cpu_count() or 2))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(run_cached, *job) for job in jobs]
        return [f.result() for f in futures]


def train_job(mode: str, seed: int, overrides: dict[str, str] | None = None,
              eval_skills: int = 256, preset: str = "test") -> tuple[list[str], str, str]:
    args = ["train", "--preset", preset, "--mode", mode, "--seed", str(seed),
            "--eval-skills", str(eval_skills)]
    for key, value in sorted((overrides or {}).items()):
        args += ["--set", f"{key}={value}"]
    return args, "checkpoint.bin", f"train-{mode}-s{seed}"


def read_solutions(run_dir: str) -> list[dict]:
    out = []
    with open(os.path.join(run_dir, "eval", "solutions.csv")) as f:
        for row in csv.DictReader(f):
            out.append(
                {
                    "method": row["method"],
                    "alpha": float(row["alpha"]),
                    "seed": int(row["seed"]),
                    "coverage_raw": int(row["coverage_raw"]),
                    "alignment_raw": float(row["alignment_raw"]),
                    "cost": float(row["cost"]),
                }
            )
    return out


def tradeoff_batch(seeds=(0, 1, 2), preset: str = "test", eval_skills: int = 256,
                   workers: int | None = None) -> dict[float, list[dict]]:
    """Fixed-alpha runs at alpha in {0, 0.2, 1}; one solution point per run."""
    jobs = []
    labels = []
    for seed in seeds:
        for alpha in (0.0, 0.2, 1.0):
            mode = "lsd" if alpha == 0.0 else "hasd"
            overrides = {} if alpha in (0.0, 0.2) else {"schedule.c": str(alpha)}
            jobs.append(train_job(mode, seed, overrides, eval_skills, preset))
            labels.append(alpha)
    dirs = run_many(jobs, workers)
    by_alpha: dict[float, list[dict]] = {0.0: [], 0.2: [], 1.0: []}
    for alpha, run_dir in zip(labels, dirs):
        pts = read_solutions(run_dir)
        assert len(pts) == 1, f"expected one solution point in {run_dir}"
        by_alpha[alpha].append(pts[0])
    return by_alpha


def budget_batch(budgets=(40, 320, 1280), seeds=(0, 1, 2), preset: str = "test",
                 eval_skills: int = 256, workers: int | None = None) -> dict[int, list[str]]:
    """alpha-conditioned runs per feedback budget; returns run dirs per budget."""
    jobs = []
    labels = []
    for seed in seeds:
        for budget in budgets:
            overrides = {"feedback.total_budget": str(budget)}
            jobs.append(train_job("alpha-hasd", seed, overrides, eval_skills, preset))
            labels.append(budget)
    dirs = run_many(jobs, workers)
    out: dict[int, list[str]] = {b: [] for b in budgets}
    for budget, run_dir in zip(labels, dirs):
        out[budget].append(run_dir)
    return out


def normalized_hypervolumes(budget_runs: dict[int, list[str]]) -> dict[int, list[float]]:
    """Per-run hypervolume under one alignment normalization for the batch."""
    from . import evaluation as ev
    from . import trainer as tr

    raw: dict[int, list[list]] = {}
    env_cfg = None
    for budget, run_dirs in budget_runs.items():
        raw[budget] = []
        for run_dir in run_dirs:
            pts = []
            for rec in read_solutions(run_dir):
                pts.append(
                    ev.SolutionPoint(rec["method"], rec["alpha"], rec["seed"],
                                     rec["coverage_raw"], rec["alignment_raw"], rec["cost"])
                )
            raw[budget].append(pts)
            if env_cfg is None:
                _, cfg = tr.load_skill_policy(os.path.join(run_dir, "checkpoint.bin"))
                env_cfg = cfg.env
    everything = [p for runs in raw.values() for pts in runs for p in pts]
    lo = min(p.alignment_raw for p in everything)
    hi = max(p.alignment_raw for p in everything)
    out: dict[int, list[float]] = {}
    for budget, pts_list in raw.items():
        out[budget] = []
        for pts in pts_list:
            ev.normalize_points(pts, env_cfg, align_lo=lo, align_hi=hi)
            out[budget].append(ev.hypervolume_2d(pts))
    return out


def downstream_batch(skill_runs: dict[float, list[str]], steps: int, goals: int,
                     eval_seed: int = 123, workers: int | None = None,
                     train_kw: dict[str, str] | None = None) -> dict[float, list[tuple[float, float]]]:
    """Meta-controllers over frozen skill checkpoints; (goal%, cost) per seed."""
    jobs = []
    labels = []
    for alpha, run_dirs in skill_runs.items():
        for i, run_dir in enumerate(run_dirs):
            args = [
                "downstream", "train",
                "--skills", os.path.join(run_dir, "checkpoint.bin"),
                "--steps", str(steps),
                "--seed", str(i),
            ]
            for key, value in sorted((train_kw or {}).items()):
                args += [key, value]
            jobs.append((args, "meta_checkpoint.bin", f"meta-a{alpha}-s{i}"))
            labels.append(alpha)
    dirs = run_many(jobs, workers)
    results: dict[float, list[tuple[float, float]]] = {a: [] for a in skill_runs}
    eval_jobs = []
    for alpha, meta_dir in zip(labels, dirs):
        eval_jobs.append(
            (
                [
                    "downstream", "eval",
                    "--meta", os.path.join(meta_dir, "meta_checkpoint.bin"),
                    "--goals", str(goals),
                    "--seed", str(eval_seed),
                ],
                "downstream_results.csv",
                f"metaeval-a{alpha}",
            )
        )
    eval_dirs = run_many(eval_jobs, workers)
    for alpha, ed in zip(labels, eval_dirs):
        with open(os.path.join(ed, "downstream_results.csv")) as f:
            row = list(csv.DictReader(f))[0]
        results[alpha].append((float(row["score"]), float(row["cost"])))
    return results
