"""Distance-maximising skill discovery: φ network, dual variable, skills.

φ maps states into the 2-D skill space and is trained to align its
displacement with the active skill while keeping ‖φ(x)−φ(y)‖ within the
Euclidean state distance; the constraint is enforced through a dual
variable updated by gradient ascent on the violation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad


@dataclass
class DsdConfig:
    skill_dim: int = 2
    hidden: tuple[int, ...] = (256, 256)
    lr_phi: float = 3e-4
    lambda_init: float = 3000.0
    epsilon: float = 1e-6
    lr_lambda: float = 1e-4


class PhiNetwork:
    """State representation φ: S -> Z with its own Adam optimizer."""

    def __init__(self, obs_dim: int, cfg: DsdConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.net = ad.Mlp([obs_dim] + list(cfg.hidden) + [cfg.skill_dim], rng=rng)
        self.opt = ad.AdamState(self.net.parameters, lr=cfg.lr_phi)

    def __call__(self, s: np.ndarray) -> np.ndarray:
        with ad.no_grad():
            return self.net.forward(np.asarray(s, dtype=np.float64)).data


class DualLambda:
    """Nonnegative Lagrange multiplier for the φ Lipschitz constraint."""

    def __init__(self, cfg: DsdConfig):
        self.value = cfg.lambda_init
        self.lr = cfg.lr_lambda
        if self.value < 0:
            raise ValueError("lambda must start nonnegative")


def dsd_reward(phi: PhiNetwork, s: np.ndarray, s_next: np.ndarray, z: np.ndarray):
    """(φ(s') − φ(s))·z, batched over leading dims."""
    dphi = phi(s_next) - phi(s)
    return np.sum(dphi * np.asarray(z, dtype=np.float64), axis=-1)


def constraint_slack(
    phi_s: np.ndarray, phi_s_next: np.ndarray, s: np.ndarray, s_next: np.ndarray, eps: float
) -> np.ndarray:
    """min(ε, d(s,s') − ‖Δφ‖) per sample; negative when violated."""
    d = np.linalg.norm(np.asarray(s_next) - np.asarray(s), axis=-1)
    dphi = np.linalg.norm(phi_s_next - phi_s, axis=-1)
    return np.minimum(eps, d - dphi)


def phi_loss_terms(
    phi: PhiNetwork, lam: float, s: np.ndarray, s_next: np.ndarray, z: np.ndarray
):
    """Graph for the φ update. Returns (loss tensor, objective, mean slack).

    Maximizes E[Δφ·z] + λ·E[min(ε, d − ‖Δφ‖)]; the returned loss is the
    negation, ready for gradient descent.
    """
    s = np.asarray(s, dtype=np.float64)
    s_next = np.asarray(s_next, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    eps = phi.cfg.epsilon
    p_s = phi.net.forward(s)
    p_next = phi.net.forward(s_next)
    dphi = ad.add(p_next, ad.mul(p_s, -1.0))
    objective = ad.tmean(ad.tsum(ad.mul(dphi, z), axis=-1))
    d = np.linalg.norm(s_next - s, axis=-1)
    # ‖Δφ‖ smoothed at 0 to keep the norm differentiable
    dphi_norm = ad.sqrt(ad.add(ad.tsum(ad.square(dphi), axis=-1), 1e-12))
    slack = ad.minimum(ad.add(ad.mul(dphi_norm, -1.0), d), eps)
    mean_slack = ad.tmean(slack)
    loss = ad.mul(ad.add(objective, ad.mul(mean_slack, lam)), -1.0)
    return loss, objective, mean_slack


def phi_loss(phi: PhiNetwork, lam: DualLambda, s, s_next, z) -> tuple[float, float]:
    """Objective value and mean constraint slack for a batch (no update)."""
    with ad.no_grad():
        _, obj, slack = phi_loss_terms(phi, lam.value, s, s_next, z)
    return obj.item(), slack.item()


def phi_update(phi: PhiNetwork, lam: DualLambda, s, s_next, z) -> tuple[float, float]:
    """One gradient step on φ followed by the dual update; returns logs."""
    loss, obj, slack = phi_loss_terms(phi, lam.value, s, s_next, z)
    phi.net.zero_grad()
    loss.backward()
    phi.opt.step()
    slack_val = slack.item()
    dual_update(lam, slack_val)
    return obj.item(), slack_val


def dual_update(lam: DualLambda, mean_slack: float) -> float:
    """λ ← max(0, λ − lr·slack): rises under violation, decays otherwise."""
    lam.value = max(0.0, lam.value - lam.lr * mean_slack)
    return lam.value


class SkillSpace:
    """Continuous skills drawn uniformly from the unit circle."""

    def __init__(self, dim: int = 2):
        if dim != 2:
            raise ValueError("only 2-D skills are supported")
        self.dim = dim

    def sample(self, rng: np.random.Generator, n: int | None = None) -> np.ndarray:
        theta = rng.uniform(0.0, 2.0 * np.pi, size=n)
        z = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
        return z


def sample_skill(space: SkillSpace, seed) -> np.ndarray:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return space.sample(rng)
