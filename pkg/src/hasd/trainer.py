"""Training orchestration: rollouts, α schedule, feedback sessions, updates.

One loop owns everything: per episode it draws a skill and a trade-off
value, per step it stores the transition and runs critic/φ/actor updates on
relabeled batches, and at scheduled steps it pauses to run a feedback
session (query sampling, teacher labeling, reward-model training).
Checkpoints are written at episode boundaries and resume bit-identically.
"""

from __future__ import annotations

import os
import warnings
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from . import checkpoint as ckpt
from . import dsd
from . import envs
from . import preference as pref
from . import sac

MODES = ("lsd", "hasd", "alpha-hasd")


@dataclass
class AlphaSchedule:
    tau: int = 30_000
    c: float = 0.2
    mode: str = "fixed"  # fixed | conditioned
    alpha_set: tuple = (1.0, 0.5, 0.2, 0.1, 0.0)

    def __post_init__(self):
        if self.tau < 0:
            raise ValueError("tau must be nonnegative")
        if self.mode not in ("fixed", "conditioned"):
            raise ValueError(f"unknown schedule mode {self.mode!r}")
        if self.c < 0:
            warnings.warn("negative alpha constant: skills will oppose preferences")


def alpha_for_step(schedule: AlphaSchedule, t: int, episode_seed=None) -> float:
    """Trade-off value for an episode starting at step t."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    if t <= schedule.tau:
        return 0.0
    if schedule.mode == "fixed":
        return schedule.c
    rng = np.random.default_rng(episode_seed)
    return float(schedule.alpha_set[rng.integers(0, len(schedule.alpha_set))])


def combined_reward(alpha, r_ha, r_dsd):
    """α·r_ha + r_dsd, elementwise; non-finite inputs are hard errors."""
    alpha = np.asarray(alpha, dtype=np.float64)
    r_ha = np.asarray(r_ha, dtype=np.float64)
    r_dsd = np.asarray(r_dsd, dtype=np.float64)
    for name, v in (("alpha", alpha), ("r_ha", r_ha), ("r_dsd", r_dsd)):
        if not np.all(np.isfinite(v)):
            raise ad.NonFiniteError(f"non-finite {name} in reward composition")
    return alpha * r_ha + r_dsd


def augment_observation(s, z, alpha, mode: str) -> np.ndarray:
    """s ⊕ z (fixed) or s ⊕ z ⊕ α (conditioned) for a single observation."""
    s = np.asarray(s, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if s.ndim != 1 or z.ndim != 1:
        raise ValueError("augment_observation takes single observations")
    if mode == "fixed":
        return np.concatenate([s, z])
    if mode == "conditioned":
        return np.concatenate([s, z, [float(alpha)]])
    raise ValueError(f"unknown augmentation mode {mode!r}")


def augment_batch(s: np.ndarray, z: np.ndarray, alpha: np.ndarray, mode: str) -> np.ndarray:
    if mode == "fixed":
        return np.concatenate([s, z], axis=-1)
    if mode == "conditioned":
        return np.concatenate([s, z, np.asarray(alpha, dtype=np.float64)[:, None]], axis=-1)
    raise ValueError(f"unknown augmentation mode {mode!r}")


@dataclass
class TrainerConfig:
    mode: str = "hasd"
    total_steps: int = 200_000
    seed: int = 0
    env: envs.Nav2dConfig = field(default_factory=envs.Nav2dConfig)
    sac: sac.SacConfig = field(default_factory=sac.SacConfig)
    dsd: dsd.DsdConfig = field(default_factory=dsd.DsdConfig)
    reward: pref.RewardConfig = field(default_factory=pref.RewardConfig)
    schedule: AlphaSchedule = field(default_factory=AlphaSchedule)
    feedback: pref.FeedbackSchedule = field(default_factory=pref.FeedbackSchedule)
    metrics_interval: int = 500
    checkpoint_interval: int = 50_000
    max_store_episodes: int = 4096
    allow_negative_alpha: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.total_steps % self.env.max_steps != 0:
            raise ValueError("total_steps must be a whole number of episodes")
        negatives = self.schedule.c < 0 or min(self.schedule.alpha_set) < 0
        if negatives and not self.allow_negative_alpha:
            raise ValueError("negative alpha requires allow_negative_alpha=true")
        if self.mode == "alpha-hasd" and self.schedule.mode != "conditioned":
            raise ValueError("alpha-hasd requires a conditioned schedule")
        if self.mode in ("lsd", "hasd") and self.schedule.mode != "fixed":
            raise ValueError(f"{self.mode} requires a fixed schedule")
        if self.mode == "lsd" and self.schedule.c != 0.0:
            raise ValueError("lsd baseline is the alpha=0 case")

    @property
    def skill_dim(self) -> int:
        return self.dsd.skill_dim

    @property
    def augmented_dim(self) -> int:
        extra = 1 if self.schedule.mode == "conditioned" else 0
        return self.env.obs_dim + self.skill_dim + extra

    def to_dict(self) -> dict:
        d = asdict(self)
        d["env"]["hazards"] = [[hz.center[0], hz.center[1], hz.radius] for hz in self.env.hazards]
        for key in ("sac", "dsd", "reward"):
            d[key]["hidden"] = list(d[key]["hidden"])
        d["schedule"]["alpha_set"] = list(self.schedule.alpha_set)
        return d

    @staticmethod
    def from_dict(d: dict) -> "TrainerConfig":
        d = dict(d)
        env_d = dict(d.pop("env"))
        env_d["hazards"] = [envs.HazardCircle((h[0], h[1]), h[2]) for h in env_d["hazards"]]
        sac_d = dict(d.pop("sac"))
        sac_d["hidden"] = tuple(sac_d["hidden"])
        dsd_d = dict(d.pop("dsd"))
        dsd_d["hidden"] = tuple(dsd_d["hidden"])
        rew_d = dict(d.pop("reward"))
        rew_d["hidden"] = tuple(rew_d["hidden"])
        sch_d = dict(d.pop("schedule"))
        sch_d["alpha_set"] = tuple(sch_d["alpha_set"])
        fb_d = dict(d.pop("feedback"))
        return TrainerConfig(
            env=envs.Nav2dConfig(**env_d),
            sac=sac.SacConfig(**sac_d),
            dsd=dsd.DsdConfig(**dsd_d),
            reward=pref.RewardConfig(**rew_d),
            schedule=AlphaSchedule(**sch_d),
            feedback=pref.FeedbackSchedule(**fb_d),
            **d,
        )


METRIC_COLUMNS = [
    "step",
    "alpha",
    "mean_r_dsd",
    "mean_r_ha",
    "lambda",
    "slack",
    "critic_loss",
    "actor_loss",
    "phi_objective",
    "entropy_coef",
    "reward_accuracy",
    "labels_consumed",
]


class Trainer:
    def __init__(self, cfg: TrainerConfig):
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.seed)
        obs_dim = cfg.env.obs_dim
        act_dim = 2
        self.agent = sac.SacAgent(cfg.augmented_dim, act_dim, cfg.sac, self.rng)
        self.phi = dsd.PhiNetwork(obs_dim, cfg.dsd, self.rng)
        self.lam = dsd.DualLambda(cfg.dsd)
        self.reward_ens = pref.RewardEnsemble(obs_dim, act_dim, cfg.reward, self.rng)
        self.replay = sac.ReplayBuffer(cfg.sac.replay_capacity, obs_dim, act_dim, cfg.skill_dim)
        self.store = pref.EpisodeStore(cfg.max_store_episodes)
        self.pref_buffer = pref.PreferenceBuffer()
        self.skills = dsd.SkillSpace(cfg.skill_dim)
        self.global_step = 0
        self.session_idx = 0
        self.labels_consumed = 0
        self.next_query_id = 0
        self.last_accuracy = float("nan")
        self.teacher = None  # optional stand-in for the ground-truth labeler
        self._last_stats: dict = {}

    # reward composition over sampled batches (relabeling)

    def relabel(self, batch: dict) -> np.ndarray:
        r_dsd = dsd.dsd_reward(self.phi, batch["s_raw"], batch["s_next_raw"], batch["z"])
        alpha = batch["alpha"]
        if np.any(alpha != 0.0):
            r_ha = self.reward_ens.predict(batch["s_raw"], batch["a"])
        else:
            r_ha = np.zeros_like(r_dsd)
        self._last_stats["mean_r_dsd"] = float(np.mean(r_dsd))
        self._last_stats["mean_r_ha"] = float(np.mean(r_ha))
        return combined_reward(alpha, r_ha, r_dsd)

    def _sample_batch(self) -> dict:
        b = self.replay.sample(self.cfg.sac.batch_size, self.rng)
        b["s_raw"], b["s_next_raw"] = b["s"], b["s_next"]
        b["s"] = augment_batch(b["s"], b["z"], b["alpha"], self.cfg.schedule.mode)
        b["s_next"] = augment_batch(b["s_next"], b["z"], b["alpha"], self.cfg.schedule.mode)
        return b

    def _update(self) -> None:
        cfg = self.cfg
        batch = None
        for _ in range(cfg.sac.update_to_data):
            batch = self._sample_batch()
            reward = self.relabel(batch)
            self._last_stats["critic_loss"] = self.agent.critic_update(batch, reward, self.rng)
        # phi shares the last critic batch, one update per env step
        obj, slack = dsd.phi_update(
            self.phi, self.lam, batch["s_raw"], batch["s_next_raw"], batch["z"]
        )
        self._last_stats["phi_objective"] = obj
        self._last_stats["slack"] = slack
        if self.global_step % cfg.sac.policy_frequency == 0:
            actor_batch = self._sample_batch()
            actor_loss, coef = self.agent.actor_update(actor_batch["s"], self.rng)
            self._last_stats["actor_loss"] = actor_loss
            self._last_stats["entropy_coef"] = coef

    # feedback sessions

    def _run_session(self) -> None:
        cfg = self.cfg
        remaining = cfg.feedback.budget - self.labels_consumed
        count = min(cfg.feedback.queries_per_session, remaining)
        if count <= 0:
            return
        pairs = pref.sample_queries(
            self.store,
            segment_length=self._segment_length(),
            count=count,
            rng=self.rng,
            id_base=self.next_query_id,
        )
        if len(pairs) < count:
            warnings.warn(
                f"only {len(pairs)} of {count} queries available at step {self.global_step}"
            )
        self.next_query_id += len(pairs)
        for p in pairs:
            p.label = self.teacher.label(p) if self.teacher is not None else pref.simulated_label(p)
            self.pref_buffer.append(p)
        self.labels_consumed += len(pairs)
        if len(self.pref_buffer):
            epochs = cfg.reward.session_epochs(len(self.pref_buffer))
            self.last_accuracy = pref.train_reward(
                self.reward_ens, self.pref_buffer, epochs, self.rng
            )

    def _segment_length(self) -> int:
        return min(25, self.cfg.env.max_steps)

    # main loop

    def run(self, out_dir, checkpoint_name="checkpoint.bin", stop_at_step=None) -> str:
        """Train until total_steps (or stop_at_step); returns checkpoint path.

        stop_at_step interrupts early at an episode boundary with a
        checkpoint the same config can resume from.
        """
        cfg = self.cfg
        stop = cfg.total_steps if stop_at_step is None else min(stop_at_step, cfg.total_steps)
        os.makedirs(out_dir, exist_ok=True)
        metrics_path = os.path.join(out_dir, "metrics.csv")
        fresh = self.global_step == 0
        mfile = open(metrics_path, "w" if fresh else "a")
        if fresh:
            mfile.write(",".join(METRIC_COLUMNS) + "\n")
        ckpt_path = os.path.join(out_dir, checkpoint_name)
        session_steps = cfg.feedback.session_steps()
        next_ckpt = ((self.global_step // cfg.checkpoint_interval) + 1) * cfg.checkpoint_interval
        try:
            while self.global_step < stop:
                ep_seed = int(self.rng.integers(0, 2**63 - 1))
                alpha = 0.0 if cfg.mode == "lsd" else alpha_for_step(
                    cfg.schedule, self.global_step, ep_seed
                )
                z = self.skills.sample(self.rng)
                state = envs.reset(cfg.env, seed=self.rng)
                ep_states, ep_actions, ep_gts = [], [], []
                ep_positions = [state.pos.copy()]
                for _ in range(cfg.env.max_steps):
                    obs = state.observation()
                    aug = augment_observation(obs, z, alpha, cfg.schedule.mode)
                    if self.global_step < cfg.sac.learning_starts:
                        action = self.rng.uniform(-1.0, 1.0, size=2)
                    else:
                        action, _ = self.agent.policy.act(aug, rng=self.rng)
                    state, tr = envs.step(cfg.env, state, action)
                    self.replay.add(tr.s, tr.a, tr.s_next, z, alpha, tr.done)
                    ep_states.append(tr.s)
                    ep_actions.append(tr.a)
                    ep_gts.append(tr.info["gt_reward"])
                    ep_positions.append(state.pos.copy())
                    self.global_step += 1
                    if (
                        self.global_step >= cfg.sac.learning_starts
                        and len(self.replay) >= cfg.sac.batch_size
                    ):
                        self._update()
                    if (
                        cfg.mode != "lsd"
                        and self.session_idx < len(session_steps)
                        and self.global_step == session_steps[self.session_idx]
                    ):
                        self._run_session()
                        self.session_idx += 1
                    if self.global_step % cfg.metrics_interval == 0:
                        self._write_metrics_row(mfile, alpha)
                self.store.add(
                    np.array(ep_states), np.array(ep_actions), np.array(ep_gts),
                    np.array(ep_positions),
                )
                if self.global_step >= next_ckpt or self.global_step >= stop:
                    self.save(ckpt_path)
                    next_ckpt = (
                        (self.global_step // cfg.checkpoint_interval) + 1
                    ) * cfg.checkpoint_interval
        except Exception:
            # leave a resumable checkpoint behind before propagating
            self.save(os.path.join(out_dir, "crash_checkpoint.bin"))
            raise
        finally:
            mfile.close()
        return ckpt_path

    def _write_metrics_row(self, mfile, alpha: float) -> None:
        s = self._last_stats
        row = [
            str(self.global_step),
            repr(float(alpha)),
            repr(s.get("mean_r_dsd", float("nan"))),
            repr(s.get("mean_r_ha", float("nan"))),
            repr(self.lam.value),
            repr(s.get("slack", float("nan"))),
            repr(s.get("critic_loss", float("nan"))),
            repr(s.get("actor_loss", float("nan"))),
            repr(s.get("phi_objective", float("nan"))),
            repr(s.get("entropy_coef", self.agent.entropy.value)),
            repr(self.last_accuracy),
            str(self.labels_consumed),
        ]
        mfile.write(",".join(row) + "\n")

    # checkpointing

    def save(self, path) -> None:
        if self.global_step % self.cfg.env.max_steps != 0:
            raise RuntimeError("checkpoints are written at episode boundaries only")
        cfg_dict = self.cfg.to_dict()
        sections: dict = {}
        sections["state"] = {
            "global_step": self.global_step,
            "session_idx": self.session_idx,
            "labels_consumed": self.labels_consumed,
            "next_query_id": self.next_query_id,
            "last_accuracy": _json_float(self.last_accuracy),
            "lambda": self.lam.value,
            "rng": _rng_state_to_json(self.rng),
        }
        sections["policy"] = ad.save_fragment(self.agent.policy.net)
        sections["phi"] = ad.save_fragment(self.phi.net)
        for i, net in enumerate(self.agent.critics.nets):
            sections[f"critic_{i}"] = ad.save_fragment(net)
        for i, net in enumerate(self.agent.critics.targets):
            sections[f"target_{i}"] = ad.save_fragment(net)
        for i, net in enumerate(self.reward_ens.members):
            sections[f"reward_{i}"] = ad.save_fragment(net)
        sections["entropy_log_coef"] = np.asarray(self.agent.entropy.log_coef.data)
        _pack_opt(sections, "opt_actor", self.agent.actor_opt)
        _pack_opt(sections, "opt_critic", self.agent.critic_opt)
        _pack_opt(sections, "opt_entropy", self.agent.entropy.opt)
        _pack_opt(sections, "opt_phi", self.phi.opt)
        for i, opt in enumerate(self.reward_ens.opts):
            _pack_opt(sections, f"opt_reward_{i}", opt)
        rp = self.replay.state_arrays()
        for key in ("obs", "action", "next_obs", "skill", "alpha", "done"):
            sections[f"replay_{key}"] = rp[key]
        sections["replay_meta"] = {"cursor": rp["cursor"], "size": rp["size"]}
        _pack_store(sections, self.store)
        _pack_pref_buffer(sections, self.pref_buffer)
        ckpt.write_container(path, cfg_dict, sections)

    def load(self, path) -> None:
        cfg_dict, sections = ckpt.read_container(path)
        if ckpt.config_hash(cfg_dict) != ckpt.config_hash(self.cfg.to_dict()):
            raise ckpt.CheckpointError("checkpoint config does not match this run's config")
        st = sections["state"]
        self.global_step = int(st["global_step"])
        self.session_idx = int(st["session_idx"])
        self.labels_consumed = int(st["labels_consumed"])
        self.next_query_id = int(st["next_query_id"])
        self.last_accuracy = float(st["last_accuracy"]) if st["last_accuracy"] is not None else float("nan")
        self.lam.value = float(st["lambda"])
        _rng_state_from_json(self.rng, st["rng"])
        _load_net(self.agent.policy.net, sections["policy"])
        _load_net(self.phi.net, sections["phi"])
        for i, net in enumerate(self.agent.critics.nets):
            _load_net(net, sections[f"critic_{i}"])
        for i, net in enumerate(self.agent.critics.targets):
            _load_net(net, sections[f"target_{i}"])
        for i, net in enumerate(self.reward_ens.members):
            _load_net(net, sections[f"reward_{i}"])
        self.agent.entropy.log_coef.data = np.asarray(sections["entropy_log_coef"])
        _unpack_opt(sections, "opt_actor", self.agent.actor_opt)
        _unpack_opt(sections, "opt_critic", self.agent.critic_opt)
        _unpack_opt(sections, "opt_entropy", self.agent.entropy.opt)
        _unpack_opt(sections, "opt_phi", self.phi.opt)
        for i, opt in enumerate(self.reward_ens.opts):
            _unpack_opt(sections, f"opt_reward_{i}", opt)
        meta = sections["replay_meta"]
        self.replay.load_state_arrays(
            {
                "obs": sections["replay_obs"],
                "action": sections["replay_action"],
                "next_obs": sections["replay_next_obs"],
                "skill": sections["replay_skill"],
                "alpha": sections["replay_alpha"],
                "done": sections["replay_done"],
                "cursor": meta["cursor"],
                "size": meta["size"],
            }
        )
        _unpack_store(sections, self.store)
        _unpack_pref_buffer(sections, self.pref_buffer)


def _json_float(x: float):
    return None if np.isnan(x) else float(x)


def _rng_state_to_json(rng: np.random.Generator) -> dict:
    state = rng.bit_generator.state
    return {
        "bit_generator": state["bit_generator"],
        "state": str(state["state"]["state"]),
        "inc": str(state["state"]["inc"]),
        "has_uint32": state["has_uint32"],
        "uinteger": state["uinteger"],
    }


def _rng_state_from_json(rng: np.random.Generator, d: dict) -> None:
    rng.bit_generator.state = {
        "bit_generator": d["bit_generator"],
        "state": {"state": int(d["state"]), "inc": int(d["inc"])},
        "has_uint32": d["has_uint32"],
        "uinteger": d["uinteger"],
    }


def _pack_opt(sections: dict, name: str, opt: ad.AdamState) -> None:
    sections[f"{name}_m"] = np.concatenate([m.ravel() for m in opt.m]) if opt.m else np.zeros(0)
    sections[f"{name}_v"] = np.concatenate([v.ravel() for v in opt.v]) if opt.v else np.zeros(0)
    sections[f"{name}_meta"] = {"step_count": opt.step_count}


def _unpack_opt(sections: dict, name: str, opt: ad.AdamState) -> None:
    flat_m = sections[f"{name}_m"]
    flat_v = sections[f"{name}_v"]
    off = 0
    for i, p in enumerate(opt.params):
        n = p.data.size
        opt.m[i] = flat_m[off : off + n].reshape(p.data.shape).copy()
        opt.v[i] = flat_v[off : off + n].reshape(p.data.shape).copy()
        off += n
    opt.step_count = int(sections[f"{name}_meta"]["step_count"])


def _load_net(net: ad.Mlp, fragment: bytes) -> None:
    loaded = ad.load_fragment(bytes(fragment))
    if loaded.layer_sizes != net.layer_sizes:
        raise ckpt.CheckpointError(
            f"network shape mismatch: {loaded.layer_sizes} vs {net.layer_sizes}"
        )
    net.set_flat_parameters(loaded.flat_parameters())


def _pack_store(sections: dict, store: pref.EpisodeStore) -> None:
    eps = store.episodes
    sections["store_meta"] = {
        "next_id": store._next_id,
        "count": len(eps),
        "ids": [ep["id"] for ep in eps],
    }
    if eps:
        sections["store_states"] = np.stack([ep["states"] for ep in eps])
        sections["store_actions"] = np.stack([ep["actions"] for ep in eps])
        sections["store_gts"] = np.stack([ep["gts"] for ep in eps])
        sections["store_positions"] = np.stack([ep["positions"] for ep in eps])


def _unpack_store(sections: dict, store: pref.EpisodeStore) -> None:
    meta = sections["store_meta"]
    store._next_id = int(meta["next_id"])
    store.episodes = []
    for k in range(int(meta["count"])):
        store.episodes.append(
            {
                "id": int(meta["ids"][k]),
                "states": sections["store_states"][k],
                "actions": sections["store_actions"][k],
                "gts": sections["store_gts"][k],
                "positions": sections["store_positions"][k],
            }
        )


def _pack_pref_buffer(sections: dict, buffer: pref.PreferenceBuffer) -> None:
    pairs = buffer.pairs()
    sections["pref_meta"] = {
        "count": len(pairs),
        "ids": [p.id for p in pairs],
        "sources": [p.source for p in pairs],
        "labels": [list(p.label) for p in pairs],
        "episode_ids": [[p.seg1.episode_id, p.seg2.episode_id] for p in pairs],
        "starts": [[p.seg1.start, p.seg2.start] for p in pairs],
        "gt_returns": [[_json_float(p.seg1.gt_return), _json_float(p.seg2.gt_return)] for p in pairs],
    }
    if pairs:
        sections["pref_states1"] = np.stack([p.seg1.states for p in pairs])
        sections["pref_actions1"] = np.stack([p.seg1.actions for p in pairs])
        sections["pref_states2"] = np.stack([p.seg2.states for p in pairs])
        sections["pref_actions2"] = np.stack([p.seg2.actions for p in pairs])


def _unpack_pref_buffer(sections: dict, buffer: pref.PreferenceBuffer) -> None:
    meta = sections["pref_meta"]
    buffer._pairs = []
    for k in range(int(meta["count"])):
        gt1, gt2 = meta["gt_returns"][k]
        seg1 = pref.Segment(
            states=sections["pref_states1"][k],
            actions=sections["pref_actions1"][k],
            gt_return=float("nan") if gt1 is None else gt1,
            episode_id=int(meta["episode_ids"][k][0]),
            start=int(meta["starts"][k][0]),
        )
        seg2 = pref.Segment(
            states=sections["pref_states2"][k],
            actions=sections["pref_actions2"][k],
            gt_return=float("nan") if gt2 is None else gt2,
            episode_id=int(meta["episode_ids"][k][1]),
            start=int(meta["starts"][k][1]),
        )
        buffer._pairs.append(
            pref.QueryPair(
                id=str(meta["ids"][k]),
                seg1=seg1,
                seg2=seg2,
                label=tuple(meta["labels"][k]),
                source=str(meta["sources"][k]),
            )
        )


def run_training(cfg: TrainerConfig, out_dir, resume_from=None) -> str:
    """Train to completion; returns the final checkpoint path."""
    trainer = Trainer(cfg)
    if resume_from is not None:
        trainer.load(resume_from)
    return trainer.run(out_dir)


def load_skill_policy(path) -> tuple[sac.SkillPolicy, TrainerConfig]:
    """Frozen policy + config from a training checkpoint (for evaluation)."""
    cfg_dict, sections = ckpt.read_container(path)
    cfg = TrainerConfig.from_dict(cfg_dict)
    policy = sac.SkillPolicy(cfg.augmented_dim, 2, cfg.sac.hidden, np.random.default_rng(0))
    _load_net(policy.net, sections["policy"])
    return policy, cfg
