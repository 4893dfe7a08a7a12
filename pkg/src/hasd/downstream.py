"""Downstream sparse-reward goal task driven through frozen skills.

A meta-controller picks a point in the skill space every environment step;
the frozen skill policy translates it into a primitive action. The meta
level sees only (agent position, goal position) and the sparse goal reward,
never the hazards.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from . import checkpoint as ckpt
from . import envs
from . import sac
from . import trainer as tr


@dataclass
class MetaControllerConfig:
    skill_checkpoint: str = ""
    alpha_interpret: float | None = None  # None: the skill run's own constant
    total_steps: int = 500_000
    seed: int = 0
    goal: envs.GoalTaskConfig = field(default_factory=envs.GoalTaskConfig)
    sac: sac.SacConfig = field(
        default_factory=lambda: sac.SacConfig(lr_critic=3e-3, lr_actor=1e-3, update_to_data=1)
    )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["goal"]["nav"]["hazards"] = [
            [hz.center[0], hz.center[1], hz.radius] for hz in self.goal.nav.hazards
        ]
        d["sac"]["hidden"] = list(self.sac.hidden)
        return d


class FrozenSkills:
    """Frozen skill policy exposed as a (positions, z) -> action adapter."""

    def __init__(self, policy: sac.SkillPolicy, skill_cfg: tr.TrainerConfig, alpha: float):
        if skill_cfg.env.state_stack != 1:
            raise ValueError("downstream skills must come from a state_stack=1 run")
        self.policy = policy
        self.skill_cfg = skill_cfg
        self.alpha = float(alpha)
        self._params_before = policy.net.flat_parameters()

    def __call__(self, pos: np.ndarray, z: np.ndarray) -> np.ndarray:
        pos = np.atleast_2d(np.asarray(pos, dtype=np.float64))
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        zn = normalize_skill(z)
        alpha_col = np.full(len(pos), self.alpha)
        obs = tr.augment_batch(pos, zn, alpha_col, self.skill_cfg.schedule.mode)
        action, _ = self.policy.act(obs, deterministic=True)
        return action[0] if action.shape[0] == 1 and pos.shape[0] == 1 else action

    def unchanged(self) -> bool:
        return np.array_equal(self._params_before, self.policy.net.flat_parameters())


def normalize_skill(z: np.ndarray) -> np.ndarray:
    """Project meta-actions onto the unit circle; zero maps to (1, 0)."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    norm = np.linalg.norm(z, axis=-1, keepdims=True)
    out = np.where(norm > 1e-12, z / np.maximum(norm, 1e-300), np.array([1.0, 0.0]))
    return out


def load_frozen_skills(path, alpha: float | None = None) -> FrozenSkills:
    policy, cfg = tr.load_skill_policy(path)
    if alpha is None:
        alpha = cfg.schedule.c if cfg.mode != "lsd" else 0.0
    return FrozenSkills(policy, cfg, alpha)


def meta_step(cfg: envs.GoalTaskConfig, state: envs.GoalState, z: np.ndarray, skills: FrozenSkills):
    """One meta decision executed for exactly one environment step."""
    return envs.goal_step(cfg, state, z, skills)


def train_meta(cfg: MetaControllerConfig, skills: FrozenSkills, out_dir=None) -> sac.SacAgent:
    """SAC-TQC over the skill space on the sparse goal task."""
    rng = np.random.default_rng(cfg.seed)
    agent = sac.SacAgent(4, 2, cfg.sac, rng)
    replay = sac.ReplayBuffer(cfg.sac.replay_capacity, 4, 2, 2)
    goal_radius = cfg.goal.goal_radius

    def reward_fn(batch):
        # sparse goal reward is a pure function of the next observation
        d = np.linalg.norm(batch["s_next"][:, :2] - batch["s_next"][:, 2:], axis=-1)
        return (d <= goal_radius).astype(np.float64)

    step = 0
    while step < cfg.total_steps:
        state = envs.goal_reset(cfg.goal, rng)
        done = state.reached  # degenerate spawn-on-goal episodes end immediately
        while not done and step < cfg.total_steps:
            obs = state.observation()
            if step < cfg.sac.learning_starts:
                z = rng.uniform(-1.0, 1.0, size=2)
            else:
                z, _ = agent.policy.act(obs, rng=rng)
            state, _, reward, _, done = envs.goal_step(cfg.goal, state, z, skills)
            replay.add(obs, z, state.observation(), np.zeros(2), 0.0, done)
            step += 1
            sac.train_step(agent, replay, cfg.sac, reward_fn, rng, step)
    if out_dir is not None:
        save_meta(agent, cfg, skills, os.path.join(out_dir, "meta_checkpoint.bin"))
    return agent


def save_meta(agent: sac.SacAgent, cfg: MetaControllerConfig, skills: FrozenSkills, path) -> None:
    sections = {
        "meta_policy": ad.save_fragment(agent.policy.net),
        "skill_policy": ad.save_fragment(skills.policy.net),
        "skill_config": skills.skill_cfg.to_dict(),
        "alpha": {"alpha_interpret": skills.alpha},
    }
    ckpt.write_container(path, cfg.to_dict(), sections)


def load_meta(path) -> tuple[sac.SkillPolicy, FrozenSkills, MetaControllerConfig]:
    cfg_dict, sections = ckpt.read_container(path)
    goal_d = dict(cfg_dict["goal"])
    nav_d = dict(goal_d.pop("nav"))
    nav_d["hazards"] = [envs.HazardCircle((h[0], h[1]), h[2]) for h in nav_d["hazards"]]
    sac_d = dict(cfg_dict["sac"])
    sac_d["hidden"] = tuple(sac_d["hidden"])
    cfg = MetaControllerConfig(
        skill_checkpoint=cfg_dict["skill_checkpoint"],
        alpha_interpret=cfg_dict["alpha_interpret"],
        total_steps=cfg_dict["total_steps"],
        seed=cfg_dict["seed"],
        goal=envs.GoalTaskConfig(nav=envs.Nav2dConfig(**nav_d), **goal_d),
        sac=sac.SacConfig(**sac_d),
    )
    skill_cfg = tr.TrainerConfig.from_dict(sections["skill_config"])
    skill_policy = sac.SkillPolicy(
        skill_cfg.augmented_dim, 2, skill_cfg.sac.hidden, np.random.default_rng(0)
    )
    tr._load_net(skill_policy.net, sections["skill_policy"])
    skills = FrozenSkills(skill_policy, skill_cfg, float(sections["alpha"]["alpha_interpret"]))
    meta_policy = sac.SkillPolicy(4, 2, cfg.sac.hidden, np.random.default_rng(0))
    tr._load_net(meta_policy.net, sections["meta_policy"])
    return meta_policy, skills, cfg


def eval_meta(
    meta_policy: sac.SkillPolicy,
    skills: FrozenSkills,
    goal_cfg: envs.GoalTaskConfig,
    n_goals: int,
    seed: int,
) -> tuple[float, float]:
    """(goal rate in percent, mean hazard-steps) over n independent episodes."""
    rng = np.random.default_rng(seed)
    successes = 0
    costs = []
    for _ in range(n_goals):
        state = envs.goal_reset(goal_cfg, rng)
        done = state.reached
        ep_cost = 0.0
        while not done:
            z, _ = meta_policy.act(state.observation(), deterministic=True)
            state, _, _, c, done = envs.goal_step(goal_cfg, state, z, skills)
            ep_cost += c
        if state.reached:
            successes += 1
        costs.append(ep_cost)
    return 100.0 * successes / n_goals, float(np.mean(costs))


def write_results_csv(path, rows: list[dict]) -> None:
    """(method, score, cost, seed) results table."""
    with open(path, "w") as f:
        f.write("method,score,cost,seed\n")
        for r in rows:
            f.write(f"{r['method']},{r['score']!r},{r['cost']!r},{r['seed']}\n")
