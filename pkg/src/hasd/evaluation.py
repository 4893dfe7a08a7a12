"""Skill-set evaluation: coverage, alignment, cost, Pareto front, hypervolume.

Skills are rolled out deterministically in batch, scored against the
ground-truth reward, bucketed into 0.1x0.1 bins for coverage, and reduced
to (coverage, alignment) solution points for multi-objective comparison.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import dsd
from . import envs
from . import sac
from . import trainer as tr

BIN = 0.1


@dataclass
class SkillRollout:
    z: np.ndarray
    alpha: float
    positions: np.ndarray  # (T+1, 2) including the start
    gt_rewards: np.ndarray  # (T,)
    costs: np.ndarray  # (T,)

    @property
    def gt_return(self) -> float:
        return float(self.gt_rewards.sum())

    @property
    def hazard_steps(self) -> float:
        return float(self.costs.sum())


@dataclass
class SolutionPoint:
    method: str
    alpha: float
    seed: int
    coverage_raw: int
    alignment_raw: float
    cost: float
    coverage: float = float("nan")  # normalized [0, 1]
    alignment: float = float("nan")  # normalized [0, 1]
    anchors: dict = field(default_factory=dict)


def rollout_skills(
    policy: sac.SkillPolicy,
    cfg: tr.TrainerConfig,
    n: int,
    alpha: float,
    seed: int,
    skills: np.ndarray | None = None,
) -> list[SkillRollout]:
    """Deterministic batched rollouts of n sampled skills at one alpha."""
    if n == 0:
        return []
    rng = np.random.default_rng(seed)
    env_cfg = cfg.env
    if skills is None:
        skills = dsd.SkillSpace(cfg.skill_dim).sample(rng, n)
    if env_cfg.random_start:
        starts = np.stack([envs.sample_free_point(env_cfg, rng) for _ in range(n)])
    else:
        starts = np.zeros((n, 2))
    history = np.repeat(starts[:, None, :], env_cfg.state_stack, axis=1)
    pos = starts.copy()
    positions = [pos.copy()]
    alpha_col = np.full(n, float(alpha))
    for _ in range(env_cfg.max_steps):
        obs = history.reshape(n, -1)
        aug = tr.augment_batch(obs, skills, alpha_col, cfg.schedule.mode)
        action, _ = policy.act(aug, deterministic=True)
        pos = envs.advance(env_cfg, pos, action)
        history = np.concatenate([history[:, 1:], pos[:, None, :]], axis=1)
        positions.append(pos.copy())
    stacked = np.stack(positions, axis=1)  # (n, T+1, 2)
    out = []
    for i in range(n):
        gts = envs.gt_reward_trajectory(env_cfg, stacked[i])
        costs = envs.in_hazard(env_cfg, stacked[i][1:]).astype(np.float64)
        out.append(
            SkillRollout(
                z=skills[i], alpha=float(alpha), positions=stacked[i], gt_rewards=gts, costs=costs
            )
        )
    return out


def occupied_bins(rollouts: list[SkillRollout]) -> set[tuple[int, int]]:
    bins: set[tuple[int, int]] = set()
    for r in rollouts:
        keys = np.floor(r.positions / BIN).astype(np.int64)
        bins.update(map(tuple, keys))
    return bins


def coverage(rollouts: list[SkillRollout]) -> int:
    """Distinct half-open 0.1x0.1 bins touched by any position."""
    return len(occupied_bins(rollouts))


def total_room_bins(env_cfg: envs.Nav2dConfig) -> int:
    """Bins whose center lies inside the room (normalization anchor)."""
    r = env_cfg.room_radius
    k = int(np.ceil(r / BIN)) + 1
    idx = np.arange(-k, k + 1)
    cx, cy = np.meshgrid(idx * BIN + BIN / 2, idx * BIN + BIN / 2)
    return int(np.sum(cx**2 + cy**2 <= r**2))


def alignment(rollouts: list[SkillRollout]) -> float:
    """Mean per-skill ground-truth return (raw, unnormalized)."""
    if not rollouts:
        return float("nan")
    return float(np.mean([r.gt_return for r in rollouts]))


def cost(rollouts: list[SkillRollout]) -> float:
    """Mean hazard-occupied steps per skill."""
    if not rollouts:
        return float("nan")
    return float(np.mean([r.hazard_steps for r in rollouts]))


def pareto_filter(points: list[SolutionPoint]) -> list[SolutionPoint]:
    """Non-dominated subset, both axes maximized; duplicates of front points stay."""
    if not points:
        return []
    coords = [(p.coverage, p.alignment) for p in points]
    uniq = sorted(set(coords), key=lambda c: (-c[0], -c[1]))
    front: set[tuple[float, float]] = set()
    best_y = -np.inf
    prev_x = None
    for x, y in uniq:
        if x == prev_x:
            continue  # lower y at the same x is dominated
        prev_x = x
        if y > best_y:
            front.add((x, y))
            best_y = y
    return [p for p, c in zip(points, coords) if c in front]


def hypervolume_2d(points: list[SolutionPoint], reference=(0.0, 0.0)) -> float:
    """Area of the union of rectangles [reference, p], maximizing both axes."""
    rx, ry = float(reference[0]), float(reference[1])
    for p in points:
        if p.coverage < rx or p.alignment < ry:
            raise ValueError(
                f"point ({p.coverage}, {p.alignment}) falls below reference ({rx}, {ry})"
            )
    front = pareto_filter(points)
    coords = sorted({(p.coverage, p.alignment) for p in front}, key=lambda c: -c[0])
    hv = 0.0
    prev_y = ry
    for x, y in coords:
        hv += (x - rx) * (y - prev_y)
        prev_y = y
    return hv


def normalize_points(points: list[SolutionPoint], env_cfg: envs.Nav2dConfig,
                     align_lo: float | None = None, align_hi: float | None = None) -> None:
    """Fill p.coverage / p.alignment in place from raw values.

    Coverage divides by the total in-room bin count. Alignment min-max
    scales against (align_lo, align_hi); when absent, the batch min/max is
    used. Anchors are recorded on every point, and values clip to [0, 1].
    """
    if not points:
        return
    bins_total = total_room_bins(env_cfg)
    raws = [p.alignment_raw for p in points]
    lo = min(raws) if align_lo is None else align_lo
    hi = max(raws) if align_hi is None else align_hi
    span = hi - lo if hi > lo else 1.0
    for p in points:
        p.coverage = min(p.coverage_raw / bins_total, 1.0)
        p.alignment = float(np.clip((p.alignment_raw - lo) / span, 0.0, 1.0))
        p.anchors = {"coverage_bins_total": bins_total, "alignment_lo": lo, "alignment_hi": hi}


def export_plot_data(rollouts: list[SkillRollout], points: list[SolutionPoint], out_dir,
                     env_cfg: envs.Nav2dConfig, hypervolume: float | None = None) -> None:
    """trajectories.jsonl + solutions.csv + front.csv + hypervolume.txt + skills.svg."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "trajectories.jsonl"), "w") as f:
        for r in rollouts:
            rec = {
                "skill": r.z.tolist(),
                "alpha": r.alpha,
                "positions": [[float(x), float(y)] for x, y in r.positions],
                "costs": r.costs.tolist(),
                "gt_rewards": r.gt_rewards.tolist(),
            }
            f.write(json.dumps(rec) + "\n")
    header = "method,alpha,seed,coverage_raw,alignment_raw,cost,coverage,alignment\n"

    def row(p: SolutionPoint) -> str:
        return ",".join(
            [
                p.method,
                repr(float(p.alpha)),
                str(p.seed),
                str(p.coverage_raw),
                repr(float(p.alignment_raw)),
                repr(float(p.cost)),
                repr(float(p.coverage)),
                repr(float(p.alignment)),
            ]
        )

    with open(os.path.join(out_dir, "solutions.csv"), "w") as f:
        f.write(header)
        for p in points:
            f.write(row(p) + "\n")
    with open(os.path.join(out_dir, "front.csv"), "w") as f:
        f.write(header)
        for p in pareto_filter(points):
            f.write(row(p) + "\n")
    if hypervolume is not None:
        with open(os.path.join(out_dir, "hypervolume.txt"), "w") as f:
            f.write(repr(float(hypervolume)) + "\n")
    write_skills_svg(os.path.join(out_dir, "skills.svg"), rollouts, env_cfg)


_PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"]


def write_skills_svg(path, rollouts: list[SkillRollout], env_cfg: envs.Nav2dConfig) -> None:
    r = env_cfg.room_radius
    pad = 0.2 * r
    lo, size = -(r + pad), 2 * (r + pad)
    alphas = sorted({ro.alpha for ro in rollouts})
    color_of = {a: _PALETTE[i % len(_PALETTE)] for i, a in enumerate(alphas)}
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="{lo:.3f} {lo:.3f} {size:.3f} {size:.3f}">',
        f'<circle cx="0" cy="0" r="{r}" fill="#f8f8f8" stroke="#333" stroke-width="0.04"/>',
    ]
    for hz in env_cfg.hazards:
        lines.append(
            f'<circle cx="{hz.center[0]}" cy="{hz.center[1]}" r="{hz.radius}" '
            'fill="#e74c3c" fill-opacity="0.35" stroke="none"/>'
        )
    for ro in rollouts:
        pts = " ".join(f"{x:.4f},{y:.4f}" for x, y in ro.positions)
        lines.append(
            f'<polyline points="{pts}" fill="none" stroke="{color_of[ro.alpha]}" '
            'stroke-width="0.02" stroke-opacity="0.6"/>'
        )
    lines.append("</svg>")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def evaluate_checkpoint(
    checkpoint_path,
    alphas: list[float],
    n_skills: int,
    seed: int,
    out_dir,
    method: str | None = None,
) -> list[SolutionPoint]:
    """Roll out a trained policy at each alpha and write all eval artifacts."""
    policy, cfg = tr.load_skill_policy(checkpoint_path)
    label = method or cfg.mode
    all_rollouts: list[SkillRollout] = []
    points: list[SolutionPoint] = []
    for alpha in alphas:
        ro = rollout_skills(policy, cfg, n_skills, alpha, seed)
        all_rollouts.extend(ro)
        points.append(
            SolutionPoint(
                method=label,
                alpha=float(alpha),
                seed=cfg.seed,
                coverage_raw=coverage(ro),
                alignment_raw=alignment(ro),
                cost=cost(ro),
            )
        )
    normalize_points(points, cfg.env)
    hv = hypervolume_2d(points) if points else 0.0
    export_plot_data(all_rollouts, points, out_dir, cfg.env, hypervolume=hv)
    return points


def load_trajectories(path) -> list[SkillRollout]:
    """Re-import a trajectories.jsonl export."""
    out = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            out.append(
                SkillRollout(
                    z=np.asarray(rec["skill"], dtype=np.float64),
                    alpha=float(rec["alpha"]),
                    positions=np.asarray(rec["positions"], dtype=np.float64),
                    gt_rewards=np.asarray(rec["gt_rewards"], dtype=np.float64),
                    costs=np.asarray(rec["costs"], dtype=np.float64),
                )
            )
    return out
