"""2D navigation environments: circular hazard room and the sparse goal task.

The room is a disc the agent cannot leave; four hazard circles carry a
safety cost. Variants: north-east preference, L-shape preference (with
3-state stacking), random starts, and the downstream goal task where a
frozen skill policy translates meta-actions into primitive steps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

GT_SPECS = ("distance_safe", "north_east", "l_shape")


@dataclass(frozen=True)
class HazardCircle:
    center: tuple[float, float]
    radius: float

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("hazard radius must be positive")

    def contains(self, pos: np.ndarray) -> np.ndarray:
        pos = np.asarray(pos, dtype=np.float64)
        d = pos - np.asarray(self.center)
        return np.sum(d * d, axis=-1) <= self.radius * self.radius


def default_hazards() -> list[HazardCircle]:
    return [HazardCircle((sx * 1.75, sy * 1.75), 0.6) for sx in (-1, 1) for sy in (-1, 1)]


@dataclass
class Nav2dConfig:
    room_radius: float = 4.0
    hazards: list[HazardCircle] = field(default_factory=default_hazards)
    max_steps: int = 75
    step_scale: float = 0.12
    state_stack: int = 1
    random_start: bool = False
    gt_spec: str = "distance_safe"

    def __post_init__(self):
        if self.state_stack not in (1, 3):
            raise ValueError("state_stack must be 1 or 3")
        if self.gt_spec not in GT_SPECS:
            raise ValueError(f"unknown gt_spec {self.gt_spec!r}")
        for hz in self.hazards:
            if np.hypot(*hz.center) + hz.radius > self.room_radius:
                raise ValueError("hazard sticks out of the room")

    @property
    def obs_dim(self) -> int:
        return 2 * self.state_stack


@dataclass
class EnvState:
    pos: np.ndarray
    t: int
    history: list[np.ndarray]  # last state_stack positions, oldest first
    start_pos: np.ndarray

    def observation(self) -> np.ndarray:
        return np.concatenate(self.history)


@dataclass
class Transition:
    s: np.ndarray
    a: np.ndarray
    s_next: np.ndarray
    done: bool
    info: dict


def in_hazard(cfg: Nav2dConfig, pos: np.ndarray) -> np.ndarray:
    """True where pos (…,2) lies inside any hazard circle."""
    pos = np.asarray(pos, dtype=np.float64)
    hit = np.zeros(pos.shape[:-1], dtype=bool)
    for hz in cfg.hazards:
        hit |= hz.contains(pos)
    return hit


def clip_to_room(pos: np.ndarray, room_radius: float) -> np.ndarray:
    """Radially project positions (…,2) back onto the disc."""
    pos = np.asarray(pos, dtype=np.float64)
    norm = np.sqrt(np.sum(pos * pos, axis=-1, keepdims=True))
    scale = np.where(norm > room_radius, room_radius / np.maximum(norm, 1e-300), 1.0)
    return pos * scale


def advance(cfg: Nav2dConfig, pos: np.ndarray, action: np.ndarray) -> np.ndarray:
    """Pure dynamics shared by the scalar env and batched rollouts."""
    action = np.clip(np.asarray(action, dtype=np.float64), -1.0, 1.0)
    return clip_to_room(pos + cfg.step_scale * action, cfg.room_radius)


def sample_free_point(cfg: Nav2dConfig, rng: np.random.Generator) -> np.ndarray:
    """Uniform point in the room outside every hazard (rejection sampling)."""
    while True:
        p = rng.uniform(-cfg.room_radius, cfg.room_radius, size=2)
        if p @ p <= cfg.room_radius**2 and not in_hazard(cfg, p):
            return p


def reset(cfg: Nav2dConfig, seed=None) -> EnvState:
    if cfg.random_start:
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        pos = sample_free_point(cfg, rng)
    else:
        pos = np.zeros(2)
    return EnvState(
        pos=pos.copy(),
        t=0,
        history=[pos.copy() for _ in range(cfg.state_stack)],
        start_pos=pos.copy(),
    )


def step(cfg: Nav2dConfig, st: EnvState, a: np.ndarray) -> tuple[EnvState, Transition]:
    if st.t >= cfg.max_steps:
        raise RuntimeError("step called after episode end")
    obs = st.observation()
    new_pos = advance(cfg, st.pos, a)
    new_hist = st.history[1:] + [new_pos.copy()]
    nxt = EnvState(pos=new_pos, t=st.t + 1, history=new_hist, start_pos=st.start_pos)
    hazard = bool(in_hazard(cfg, new_pos))
    if cfg.gt_spec == "distance_safe":
        gt = gt_reward_distance_safe(cfg, new_pos, st.pos, st.start_pos)
    elif cfg.gt_spec == "north_east":
        gt = gt_reward_north_east(new_pos, st.start_pos)
    else:  # l_shape
        if cfg.state_stack != 3:
            raise ValueError("l_shape needs state_stack=3")
        gt = gt_reward_l_shape(st.history[-2], st.pos, new_pos)
    tr = Transition(
        s=obs,
        a=np.asarray(a, dtype=np.float64).copy(),
        s_next=nxt.observation(),
        done=nxt.t == cfg.max_steps,
        info={"hazard": hazard, "gt_reward": gt, "cost": 1.0 if hazard else 0.0},
    )
    return nxt, tr


def gt_reward_distance_safe(cfg, pos, prev_pos, start_pos) -> float:
    """Displacement from start plus step length, minus 1 inside a hazard."""
    r = float(np.linalg.norm(pos - start_pos)) + float(np.linalg.norm(pos - prev_pos))
    if in_hazard(cfg, pos):
        r -= 1.0
    return r


def gt_reward_north_east(pos, start_pos) -> float:
    if pos[0] > 0 and pos[1] > 0:
        return float(np.linalg.norm(pos - start_pos))
    return -1.0


def gt_reward_l_shape(p_oldest, p_mid, p_new) -> float:
    """1 - |angle(deg) - 90| over the two latest displacement vectors."""
    d1 = np.asarray(p_mid, dtype=np.float64) - np.asarray(p_oldest, dtype=np.float64)
    d2 = np.asarray(p_new, dtype=np.float64) - np.asarray(p_mid, dtype=np.float64)
    n1 = np.linalg.norm(d1)
    n2 = np.linalg.norm(d2)
    if n1 < 1e-9 or n2 < 1e-9:
        theta = 0.0  # degenerate displacement scored as collinear
    else:
        c = np.clip(np.dot(d1, d2) / (n1 * n2), -1.0, 1.0)
        theta = np.degrees(np.arccos(c))
    return float(1.0 - abs(theta - 90.0))


def gt_reward_trajectory(cfg: Nav2dConfig, positions: np.ndarray) -> np.ndarray:
    """Per-step ground-truth rewards for a full trajectory.

    positions: (T+1, 2) including the start; returns (T,) rewards for the
    arrival positions 1..T. Used by evaluation and by test oracles.
    """
    positions = np.asarray(positions, dtype=np.float64)
    start = positions[0]
    out = np.zeros(len(positions) - 1)
    for t in range(1, len(positions)):
        if cfg.gt_spec == "distance_safe":
            out[t - 1] = gt_reward_distance_safe(cfg, positions[t], positions[t - 1], start)
        elif cfg.gt_spec == "north_east":
            out[t - 1] = gt_reward_north_east(positions[t], start)
        elif cfg.gt_spec == "l_shape":
            oldest = positions[max(t - 2, 0)]
            mid = positions[max(t - 1, 0)]
            out[t - 1] = gt_reward_l_shape(oldest, mid, positions[t])
        else:
            raise ValueError(cfg.gt_spec)
    return out


@dataclass
class GoalTaskConfig:
    nav: Nav2dConfig = field(default_factory=Nav2dConfig)
    goal_radius: float = 0.3
    max_steps: int = 75

    def __post_init__(self):
        if self.goal_radius <= 0:
            raise ValueError("goal_radius must be positive")


@dataclass
class GoalState:
    pos: np.ndarray
    goal: np.ndarray
    t: int
    reached: bool

    def observation(self) -> np.ndarray:
        # agent position and goal position only: no hazard information
        return np.concatenate([self.pos, self.goal])


def goal_reset(cfg: GoalTaskConfig, rng: np.random.Generator) -> GoalState:
    start = sample_free_point(cfg.nav, rng)
    goal = sample_free_point(cfg.nav, rng)
    reached = bool(np.linalg.norm(start - goal) <= cfg.goal_radius)
    return GoalState(pos=start, goal=goal, t=0, reached=reached)


def goal_step(
    cfg: GoalTaskConfig, st: GoalState, z: np.ndarray, skill_adapter
) -> tuple[GoalState, np.ndarray, float, float, bool]:
    """One meta step: z is mapped through the frozen skill policy.

    Returns (next state, primitive action, sparse reward, cost, done).
    """
    if skill_adapter is None:
        raise RuntimeError("goal task needs a frozen skill policy")
    if st.t >= cfg.max_steps or st.reached:
        raise RuntimeError("step called after episode end")
    action = skill_adapter(st.pos, np.asarray(z, dtype=np.float64))
    new_pos = advance(cfg.nav, st.pos, action)
    reached = bool(np.linalg.norm(new_pos - st.goal) <= cfg.goal_radius)
    cost = 1.0 if in_hazard(cfg.nav, new_pos) else 0.0
    nxt = GoalState(pos=new_pos, goal=st.goal, t=st.t + 1, reached=reached)
    reward = 1.0 if reached else 0.0
    done = reached or nxt.t == cfg.max_steps
    return nxt, np.asarray(action, dtype=np.float64), reward, cost, done
