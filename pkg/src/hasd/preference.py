"""Preference-based reward learning.

Fixed-length trajectory segments are paired into queries, labeled by a
simulated teacher (ground-truth returns) or by humans through the export/
import files, and an ensemble of reward nets is fit with the pairwise
softmax-over-returns likelihood. The ensemble mean is the alignment reward.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

CHOICES = {"1": (1.0, 0.0), "2": (0.0, 1.0), "tie": (0.5, 0.5)}


@dataclass
class Segment:
    states: np.ndarray  # (L, obs_dim), observation before each action
    actions: np.ndarray  # (L, act_dim)
    gt_return: float
    episode_id: int
    start: int

    def __len__(self) -> int:
        return len(self.states)


@dataclass
class QueryPair:
    id: str
    seg1: Segment
    seg2: Segment
    label: tuple[float, float] | None = None
    source: str = "simulated"

    def __post_init__(self):
        if len(self.seg1) != len(self.seg2):
            raise ValueError("paired segments must have equal length")


class PreferenceBuffer:
    """Append-only store of labeled pairs."""

    def __init__(self):
        self._pairs: list[QueryPair] = []

    def append(self, pair: QueryPair) -> None:
        if pair.label is None:
            raise ValueError("only labeled pairs enter the buffer")
        self._pairs.append(pair)

    def __len__(self) -> int:
        return len(self._pairs)

    def pairs(self) -> list[QueryPair]:
        return list(self._pairs)


@dataclass
class FeedbackSchedule:
    queries_per_session: int = 128
    sessions: int = 10
    frequency: int = 12_000
    start_step: int = 30_000
    sampling: str = "uniform"
    total_budget: int | None = None  # None: sessions * queries_per_session

    def __post_init__(self):
        if self.sampling != "uniform":
            raise ValueError("only uniform sampling is supported")

    @property
    def budget(self) -> int:
        if self.total_budget is None:
            return self.sessions * self.queries_per_session
        return self.total_budget

    def session_steps(self) -> list[int]:
        return [self.start_step + i * self.frequency for i in range(self.sessions)]


class EpisodeStore:
    """Recent episodes kept around for cutting query segments."""

    def __init__(self, max_episodes: int = 4096):
        self.max_episodes = max_episodes
        self.episodes: list[dict] = []
        self._next_id = 0

    def add(self, states: np.ndarray, actions: np.ndarray, gts: np.ndarray, positions: np.ndarray) -> int:
        eid = self._next_id
        self._next_id += 1
        self.episodes.append(
            {
                "id": eid,
                "states": np.asarray(states, dtype=np.float64),
                "actions": np.asarray(actions, dtype=np.float64),
                "gts": np.asarray(gts, dtype=np.float64),
                "positions": np.asarray(positions, dtype=np.float64),
            }
        )
        if len(self.episodes) > self.max_episodes:
            self.episodes.pop(0)
        return eid

    def __len__(self) -> int:
        return len(self.episodes)

    def cut_segment(self, ep: dict, start: int, length: int) -> Segment:
        return Segment(
            states=ep["states"][start : start + length].copy(),
            actions=ep["actions"][start : start + length].copy(),
            gt_return=float(ep["gts"][start : start + length].sum()),
            episode_id=ep["id"],
            start=start,
        )

    def segment_positions(self, pair_segment: Segment) -> np.ndarray | None:
        for ep in self.episodes:
            if ep["id"] == pair_segment.episode_id:
                s, L = pair_segment.start, len(pair_segment)
                return ep["positions"][s : s + L + 1]
        return None


def sample_queries(
    store: EpisodeStore,
    segment_length: int,
    count: int,
    rng: np.random.Generator,
    id_base: int = 0,
) -> list[QueryPair]:
    """Uniform segment starts across stored episodes, paired randomly."""
    eligible = [ep for ep in store.episodes if len(ep["actions"]) >= segment_length]
    if not eligible:
        return []

    def draw() -> Segment:
        ep = eligible[rng.integers(0, len(eligible))]
        start = int(rng.integers(0, len(ep["actions"]) - segment_length + 1))
        return store.cut_segment(ep, start, segment_length)

    return [QueryPair(id=str(id_base + i), seg1=draw(), seg2=draw()) for i in range(count)]


def simulated_label(pair: QueryPair) -> tuple[float, float]:
    """Rational teacher: prefers the segment with the larger gt return."""
    r1, r2 = pair.seg1.gt_return, pair.seg2.gt_return
    if abs(r1 - r2) <= 1e-9:
        return (0.5, 0.5)
    return (1.0, 0.0) if r1 > r2 else (0.0, 1.0)


@dataclass
class RewardConfig:
    ensemble_size: int = 3
    hidden: tuple[int, ...] = (256, 256)
    lr: float = 3e-4
    minibatch: int = 128
    epochs_per_session: int = 40
    updates_per_session: int | None = None  # caps epochs x batches when set
    stop_accuracy: float | None = None  # early-stop once training labels are fit
    heldout_fraction: float = 0.1

    def session_epochs(self, n_pairs: int) -> int:
        """Epochs for one session honoring the optional update budget."""
        if self.updates_per_session is None:
            return self.epochs_per_session
        batches = max(1, -(-n_pairs // self.minibatch))
        return max(1, self.updates_per_session // batches)


class RewardEnsemble:
    """Independent reward nets r(s,a); members differ only by init seed."""

    def __init__(self, obs_dim: int, action_dim: int, cfg: RewardConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.obs_dim = obs_dim
        self.action_dim = action_dim
        sizes = [obs_dim + action_dim, *cfg.hidden, 1]
        self.members = [ad.Mlp(sizes, rng=rng) for _ in range(cfg.ensemble_size)]
        self.opts = [ad.AdamState(m.parameters, lr=cfg.lr) for m in self.members]
        self.query_count = 0  # reward-composition calls, for the budget-0 invariant

    def predict(self, s: np.ndarray, a: np.ndarray) -> np.ndarray:
        """Ensemble-mean reward for a batch; no output normalization."""
        self.query_count += 1
        x = np.concatenate([np.atleast_2d(s), np.atleast_2d(a)], axis=-1)
        with ad.no_grad():
            outs = [m.forward(x).data[:, 0] for m in self.members]
        return np.mean(outs, axis=0)


def predict_reward(ensemble: RewardEnsemble, s, a):
    out = ensemble.predict(s, a)
    return out if out.shape != (1,) else float(out[0])


def _segment_inputs(seg: Segment) -> np.ndarray:
    return np.concatenate([seg.states, seg.actions], axis=-1)


def segment_return(member: ad.Mlp, seg: Segment) -> float:
    with ad.no_grad():
        return float(member.forward(_segment_inputs(seg)).data.sum())


def bt_probability(member: ad.Mlp, pair: QueryPair) -> float:
    """P[seg1 preferred]: softmax over the two predicted segment returns."""
    r1 = segment_return(member, pair.seg1)
    r2 = segment_return(member, pair.seg2)
    m = max(r1, r2)
    e1, e2 = np.exp(r1 - m), np.exp(r2 - m)
    return float(e1 / (e1 + e2))


def ensemble_probability(ensemble: RewardEnsemble, pair: QueryPair) -> float:
    return float(np.mean([bt_probability(m, pair) for m in ensemble.members]))


def reward_loss(member: ad.Mlp, pairs: list[QueryPair]) -> ad.Tensor:
    """Preference cross-entropy over a labeled batch (graph for backprop).

    Uses -log P[win] = softplus(-(R_win - R_lose)), exact for fractional
    labels too.
    """
    if not pairs:
        raise ValueError("empty batch")
    L = len(pairs[0].seg1)
    x1 = np.stack([_segment_inputs(p.seg1) for p in pairs])  # (B, L, d)
    x2 = np.stack([_segment_inputs(p.seg2) for p in pairs])
    y1 = np.array([p.label[0] for p in pairs])
    y2 = np.array([p.label[1] for p in pairs])
    b = len(pairs)
    d = x1.shape[-1]
    r1 = ad.tsum(ad.reshape(member.forward(ad.Tensor(x1.reshape(b * L, d))), (b, L)), axis=1)
    r2 = ad.tsum(ad.reshape(member.forward(ad.Tensor(x2.reshape(b * L, d))), (b, L)), axis=1)
    diff = ad.add(r1, ad.mul(r2, -1.0))
    # y1*softplus(-diff) + y2*softplus(diff)
    loss = ad.add(ad.mul(ad.softplus(ad.mul(diff, -1.0)), y1), ad.mul(ad.softplus(diff), y2))
    return ad.tmean(loss)


def train_reward(
    ensemble: RewardEnsemble,
    buffer: PreferenceBuffer,
    epochs: int,
    rng: np.random.Generator,
) -> float:
    """Fit every member independently; returns held-out label accuracy.

    The held-out split is 10% of labeled pairs (only when the buffer has at
    least 10); ties are excluded from the accuracy count. With no held-out
    pairs the training set is scored instead.
    """
    pairs = buffer.pairs()
    if not pairs:
        raise ValueError("empty preference buffer")
    idx = rng.permutation(len(pairs))
    n_held = int(len(pairs) * ensemble.cfg.heldout_fraction) if len(pairs) >= 10 else 0
    held = [pairs[i] for i in idx[:n_held]]
    train = [pairs[i] for i in idx[n_held:]]
    mb = ensemble.cfg.minibatch
    stop_at = ensemble.cfg.stop_accuracy
    for member, opt in zip(ensemble.members, ensemble.opts):
        member_rng = np.random.default_rng(rng.integers(0, 2**63 - 1))
        for epoch in range(epochs):
            order = member_rng.permutation(len(train))
            for lo in range(0, len(train), mb):
                batch = [train[i] for i in order[lo : lo + mb]]
                loss = reward_loss(member, batch)
                member.zero_grad()
                loss.backward()
                opt.step()
            if stop_at is not None and (epoch + 1) % 10 == 0:
                if _member_accuracy(member, train) >= stop_at:
                    break
    eval_pairs = held if held else train
    return label_accuracy(ensemble, eval_pairs)


def _member_accuracy(member: ad.Mlp, pairs: list[QueryPair]) -> float:
    correct = total = 0
    for p in pairs:
        if p.label is None or p.label[0] == p.label[1]:
            continue
        total += 1
        prob = bt_probability(member, p)
        predicted = (1.0, 0.0) if prob > 0.5 else (0.0, 1.0)
        if predicted == p.label:
            correct += 1
    return correct / total if total else 1.0


def label_accuracy(ensemble: RewardEnsemble, pairs: list[QueryPair]) -> float:
    """Fraction of non-tie pairs whose preferred side the ensemble ranks higher."""
    correct = total = 0
    for p in pairs:
        if p.label is None or p.label[0] == p.label[1]:
            continue
        total += 1
        prob = ensemble_probability(ensemble, p)
        predicted = (1.0, 0.0) if prob > 0.5 else (0.0, 1.0)
        if predicted == p.label:
            correct += 1
    return correct / total if total else float("nan")


def export_queries(pairs: list[QueryPair], path) -> int:
    """Unlabeled pairs as JSON Lines with full segment coordinates."""
    n = 0
    with open(path, "w") as f:
        for p in pairs:
            rec = {
                "id": p.id,
                "seg1": {"states": p.seg1.states.tolist(), "actions": p.seg1.actions.tolist()},
                "seg2": {"states": p.seg2.states.tolist(), "actions": p.seg2.actions.tolist()},
                "meta": {
                    "episode_ids": [p.seg1.episode_id, p.seg2.episode_id],
                    "start_indices": [p.seg1.start, p.seg2.start],
                },
            }
            f.write(json.dumps(rec) + "\n")
            n += 1
    return n


def load_queries(path) -> list[QueryPair]:
    pairs = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                segs = []
                for key in ("seg1", "seg2"):
                    meta_i = 0 if key == "seg1" else 1
                    segs.append(
                        Segment(
                            states=np.asarray(rec[key]["states"], dtype=np.float64),
                            actions=np.asarray(rec[key]["actions"], dtype=np.float64),
                            gt_return=float("nan"),
                            episode_id=int(rec["meta"]["episode_ids"][meta_i]),
                            start=int(rec["meta"]["start_indices"][meta_i]),
                        )
                    )
                pairs.append(QueryPair(id=str(rec["id"]), seg1=segs[0], seg2=segs[1]))
            except (KeyError, ValueError, TypeError) as e:
                raise ValueError(f"malformed query record at line {lineno}: {e}") from e
    return pairs


def import_human_labels(buffer: PreferenceBuffer, queries: list[QueryPair], labels_path) -> int:
    """Append labeled pairs (source=human) from a label file; skips stay out.

    Any malformed record rejects the whole file, naming the line.
    """
    by_id = {p.id: p for p in queries}
    staged: list[QueryPair] = []
    with open(labels_path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                qid = str(rec["id"])
                choice = rec["choice"]
            except (json.JSONDecodeError, KeyError, TypeError) as e:
                raise ValueError(f"malformed label record at line {lineno}: {e}") from e
            if choice == "skip":
                continue
            if choice not in CHOICES:
                raise ValueError(f"malformed label record at line {lineno}: bad choice {choice!r}")
            if qid not in by_id:
                raise ValueError(f"malformed label record at line {lineno}: unknown id {qid!r}")
            pair = by_id[qid]
            staged.append(
                QueryPair(id=pair.id, seg1=pair.seg1, seg2=pair.seg2, label=CHOICES[choice], source="human")
            )
    for p in staged:
        buffer.append(p)
    return len(staged)
