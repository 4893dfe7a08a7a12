"""Off-policy backbone: squashed-Gaussian actor + truncated quantile critics.

The critic ensemble learns return distributions as quantile atoms; targets
pool every critic's atoms, drop the largest few, and bootstrap through the
entropy-regularized next action. Rewards are never stored: each sampled
batch is relabeled through the caller's reward function, so a changing
reward model transparently re-scores old experience.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
LOG2 = float(np.log(2.0))


@dataclass
class SacConfig:
    lr_critic: float = 3e-4
    lr_actor: float = 1e-4
    policy_frequency: int = 2
    update_to_data: int = 4
    batch_size: int = 256
    gamma: float = 0.99
    replay_capacity: int = 1_000_000
    hidden: tuple[int, ...] = (256, 256)
    target_smoothing: float = 0.995
    n_quantiles: int = 25
    n_critics: int = 3
    top_quantiles_to_drop: int = 2
    learning_starts: int = 1000
    entropy_coef_init: float = 1.0
    lr_entropy: float | None = None  # falls back to lr_critic

    def __post_init__(self):
        if self.top_quantiles_to_drop * self.n_critics >= self.n_quantiles * self.n_critics:
            raise ValueError("truncation would drop every atom")
        for name in ("lr_critic", "lr_actor", "batch_size", "gamma", "target_smoothing"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @property
    def kept_atoms(self) -> int:
        return self.n_critics * (self.n_quantiles - self.top_quantiles_to_drop)


class SkillPolicy:
    """Gaussian policy head with tanh squashing to [-1, 1]^dim."""

    def __init__(self, obs_dim: int, action_dim: int, hidden, rng: np.random.Generator):
        self.obs_dim = obs_dim
        self.action_dim = action_dim
        self.net = ad.Mlp([obs_dim, *hidden, 2 * action_dim], rng=rng)

    def dist_params(self, obs_t: ad.Tensor):
        out = self.net.forward(obs_t)
        mean = ad.narrow(out, 0, self.action_dim)
        log_std = ad.clip(ad.narrow(out, self.action_dim, self.action_dim), LOG_STD_MIN, LOG_STD_MAX)
        return mean, log_std

    def sample_with_grad(self, obs_t: ad.Tensor, eps: np.ndarray):
        """Reparameterized tanh-Gaussian sample and its log-prob (tensors)."""
        mean, log_std = self.dist_params(obs_t)
        std = ad.exp(log_std)
        u = ad.add(mean, ad.mul(std, eps))
        action = ad.tanh(u)
        logp = ad.gaussian_log_prob(mean, log_std, u)
        # log(1 - tanh(u)^2) = 2(log 2 - u - softplus(-2u)), summed over dims
        corr = ad.tsum(
            ad.mul(ad.add(ad.add(ad.mul(u, -1.0), ad.mul(ad.softplus(ad.mul(u, -2.0)), -1.0)), LOG2), 2.0),
            axis=-1,
        )
        logp = ad.add(logp, ad.mul(corr, -1.0))
        return action, logp

    def act(self, obs: np.ndarray, rng: np.random.Generator | None = None, deterministic=False):
        """Numpy fast path; returns (action, log_prob) without building a tape."""
        obs = np.asarray(obs, dtype=np.float64)
        squeeze = obs.ndim == 1
        if squeeze:
            obs = obs[None, :]
        with ad.no_grad():
            out = self.net.forward(obs).data
        mean = out[:, : self.action_dim]
        log_std = np.clip(out[:, self.action_dim :], LOG_STD_MIN, LOG_STD_MAX)
        std = np.exp(log_std)
        if deterministic:
            u = mean
        else:
            if rng is None:
                raise ValueError("stochastic sampling needs an rng")
            u = mean + std * rng.standard_normal(mean.shape)
        action = np.tanh(u)
        logp = np.sum(
            -0.5 * ((u - mean) / std) ** 2 - log_std - 0.5 * np.log(2 * np.pi), axis=-1
        )
        logp -= np.sum(2.0 * (LOG2 - u - np.logaddexp(0.0, -2.0 * u)), axis=-1)
        if squeeze:
            return action[0], logp[0]
        return action, logp


def sample_action(policy: SkillPolicy, obs, mode: str = "stochastic", rng=None):
    if mode not in ("stochastic", "deterministic"):
        raise ValueError(f"unknown mode {mode!r}")
    return policy.act(obs, rng=rng, deterministic=(mode == "deterministic"))


class QuantileCriticEnsemble:
    """N independent quantile critics plus their EMA target copies."""

    def __init__(self, obs_dim: int, action_dim: int, cfg: SacConfig, rng: np.random.Generator):
        sizes = [obs_dim + action_dim, *cfg.hidden, cfg.n_quantiles]
        self.cfg = cfg
        self.nets = [ad.Mlp(sizes, rng=rng) for _ in range(cfg.n_critics)]
        self.targets = [net.copy() for net in self.nets]
        m = cfg.n_quantiles
        self.taus = (2.0 * np.arange(1, m + 1) - 1.0) / (2.0 * m)

    def online_atoms_graph(self, x_t: ad.Tensor) -> list[ad.Tensor]:
        return [net.forward(x_t) for net in self.nets]

    def target_atoms(self, obs: np.ndarray, action: np.ndarray) -> np.ndarray:
        """(B, N*M) pooled target-net atoms, tape-free."""
        x = np.concatenate([obs, action], axis=-1)
        with ad.no_grad():
            outs = [net.forward(x).data for net in self.targets]
        return np.concatenate(outs, axis=-1)

    def ema_update(self, coef: float) -> None:
        for online, target in zip(self.nets, self.targets):
            for po, pt in zip(online.parameters, target.parameters):
                pt.data = coef * pt.data + (1.0 - coef) * po.data


class EntropyCoef:
    """Trainable temperature with target entropy -dim(A)."""

    def __init__(self, action_dim: int, lr: float, init: float = 1.0):
        if init <= 0:
            raise ValueError("entropy coefficient must start positive")
        self.log_coef = ad.Tensor(np.float64(np.log(init)), requires_grad=True)
        self.target_entropy = -float(action_dim)
        self.opt = ad.AdamState([self.log_coef], lr=lr)

    @property
    def value(self) -> float:
        return float(np.exp(self.log_coef.data))

    def update(self, logp: np.ndarray) -> float:
        grad = -np.mean(logp + self.target_entropy)
        ad.adam_step(self.opt, [self.log_coef], [np.float64(grad)])
        return float(self.log_coef.data) * float(-np.mean(logp + self.target_entropy))


class ReplayBuffer:
    """Ring buffer over (s, a, s', z, alpha, done); rewards live elsewhere."""

    def __init__(self, capacity: int, obs_dim: int, action_dim: int, skill_dim: int):
        self.capacity = int(capacity)
        self.obs = np.zeros((self.capacity, obs_dim))
        self.action = np.zeros((self.capacity, action_dim))
        self.next_obs = np.zeros((self.capacity, obs_dim))
        self.skill = np.zeros((self.capacity, skill_dim))
        self.alpha = np.zeros(self.capacity)
        self.done = np.zeros(self.capacity)
        self.size = 0
        self.cursor = 0

    def add(self, s, a, s_next, z, alpha: float, done: bool) -> None:
        i = self.cursor
        self.obs[i] = s
        self.action[i] = a
        self.next_obs[i] = s_next
        self.skill[i] = z
        self.alpha[i] = alpha
        self.done[i] = 1.0 if done else 0.0
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def __len__(self) -> int:
        return self.size

    def sample(self, n: int, rng: np.random.Generator) -> dict:
        idx = rng.integers(0, self.size, size=n)
        return {
            "s": self.obs[idx],
            "a": self.action[idx],
            "s_next": self.next_obs[idx],
            "z": self.skill[idx],
            "alpha": self.alpha[idx],
            "done": self.done[idx],
        }

    def state_arrays(self) -> dict:
        n = self.size
        return {
            "obs": self.obs[:n],
            "action": self.action[:n],
            "next_obs": self.next_obs[:n],
            "skill": self.skill[:n],
            "alpha": self.alpha[:n],
            "done": self.done[:n],
            "cursor": self.cursor,
            "size": n,
        }

    def load_state_arrays(self, state: dict) -> None:
        n = int(state["size"])
        self.obs[:n] = state["obs"]
        self.action[:n] = state["action"]
        self.next_obs[:n] = state["next_obs"]
        self.skill[:n] = state["skill"]
        self.alpha[:n] = state["alpha"]
        self.done[:n] = state["done"]
        self.size = n
        self.cursor = int(state["cursor"])


def tqc_target(
    ensemble: QuantileCriticEnsemble,
    next_obs: np.ndarray,
    next_action: np.ndarray,
    next_logp: np.ndarray,
    reward: np.ndarray,
    done: np.ndarray,
    entropy_coef: float,
    cfg: SacConfig,
) -> np.ndarray:
    """Truncated distributional targets, shape (B, N*(M-k))."""
    atoms = ensemble.target_atoms(next_obs, next_action)
    atoms = np.sort(atoms, axis=-1)
    drop = cfg.top_quantiles_to_drop * cfg.n_critics
    if drop > 0:
        atoms = atoms[:, :-drop]
    soft = atoms - entropy_coef * next_logp[:, None]
    return reward[:, None] + cfg.gamma * (1.0 - done[:, None]) * soft


def critic_loss(
    ensemble: QuantileCriticEnsemble, obs: np.ndarray, action: np.ndarray, targets: np.ndarray
) -> ad.Tensor:
    """Mean quantile-Huber loss across the ensemble (graph for backprop)."""
    x = ad.Tensor(np.concatenate([obs, action], axis=-1))
    losses = [
        ad.quantile_huber_loss(net.forward(x), targets, ensemble.taus) for net in ensemble.nets
    ]
    total = losses[0]
    for l in losses[1:]:
        total = ad.add(total, l)
    return ad.mul(total, 1.0 / len(losses))


class SacAgent:
    """Policy + critics + entropy coefficient + their optimizers."""

    def __init__(self, obs_dim: int, action_dim: int, cfg: SacConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.obs_dim = obs_dim
        self.action_dim = action_dim
        self.policy = SkillPolicy(obs_dim, action_dim, cfg.hidden, rng)
        self.critics = QuantileCriticEnsemble(obs_dim, action_dim, cfg, rng)
        self.entropy = EntropyCoef(
            action_dim, cfg.lr_entropy or cfg.lr_critic, init=cfg.entropy_coef_init
        )
        self.actor_opt = ad.AdamState(self.policy.net.parameters, lr=cfg.lr_actor)
        self.critic_opt = ad.AdamState(
            [p for net in self.critics.nets for p in net.parameters], lr=cfg.lr_critic
        )

    def critic_update(self, batch: dict, reward: np.ndarray, rng: np.random.Generator) -> float:
        cfg = self.cfg
        next_action, next_logp = self.policy.act(batch["s_next"], rng=rng)
        targets = tqc_target(
            self.critics,
            batch["s_next"],
            next_action,
            next_logp,
            reward,
            batch["done"],
            self.entropy.value,
            cfg,
        )
        loss = critic_loss(self.critics, batch["s"], batch["a"], targets)
        for net in self.critics.nets:
            net.zero_grad()
        loss.backward()
        self.critic_opt.step()
        self.critics.ema_update(cfg.target_smoothing)
        return loss.item()

    def actor_update(self, obs: np.ndarray, rng: np.random.Generator) -> tuple[float, float]:
        return actor_and_entropy_step(self.policy, self.critics, self.entropy, obs, rng, self.actor_opt)


def actor_and_entropy_step(
    policy: SkillPolicy,
    ensemble: QuantileCriticEnsemble,
    entropy: EntropyCoef,
    obs: np.ndarray,
    rng: np.random.Generator,
    actor_opt: ad.AdamState,
) -> tuple[float, float]:
    """One actor step (max kept-atom mean minus entropy) and one coef step."""
    cfg = ensemble.cfg
    obs_t = ad.Tensor(np.asarray(obs, dtype=np.float64))
    eps = rng.standard_normal((obs.shape[0], policy.action_dim))
    action, logp = policy.sample_with_grad(obs_t, eps)
    x = ad.concat([obs_t, action], axis=-1)
    pooled = ad.concat([net.forward(x) for net in ensemble.nets], axis=-1)
    order = np.argsort(pooled.data, axis=-1)
    sorted_atoms = ad.take_along_last(pooled, order)
    kept = ad.narrow(sorted_atoms, 0, cfg.kept_atoms, axis=-1)
    q_value = ad.tmean(kept, axis=-1)
    coef = entropy.value
    actor_loss = ad.tmean(ad.add(ad.mul(logp, coef), ad.mul(q_value, -1.0)))
    policy.net.zero_grad()
    for net in ensemble.nets:
        net.zero_grad()
    actor_loss.backward()
    # critics only provide the value landscape here; their grads are discarded
    actor_opt.step()
    entropy.update(logp.data)
    return actor_loss.item(), coef


def train_step(
    agent: SacAgent,
    replay: ReplayBuffer,
    cfg: SacConfig,
    reward_fn,
    rng: np.random.Generator,
    global_step: int,
) -> dict:
    """Per-env-step learning: UTD critic updates, periodic actor update."""
    metrics = {"critic_loss": np.nan, "actor_loss": np.nan, "entropy_coef": agent.entropy.value}
    if len(replay) < cfg.batch_size:
        return metrics
    for _ in range(cfg.update_to_data):
        batch = replay.sample(cfg.batch_size, rng)
        reward = np.asarray(reward_fn(batch), dtype=np.float64)
        if not np.all(np.isfinite(reward)):
            raise ad.NonFiniteError("reward_fn produced non-finite rewards")
        metrics["critic_loss"] = agent.critic_update(batch, reward, rng)
    if global_step % cfg.policy_frequency == 0:
        batch = replay.sample(cfg.batch_size, rng)
        actor_loss, coef = agent.actor_update(batch["s"], rng)
        metrics["actor_loss"] = actor_loss
        metrics["entropy_coef"] = coef
    return metrics
