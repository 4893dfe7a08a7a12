import numpy as np
import pytest

from hasd import autodiff as ad
from hasd import envs
from hasd import preference as pref


def make_segment(states, actions, gt=0.0, eid=0, start=0):
    return pref.Segment(
        states=np.asarray(states, dtype=np.float64),
        actions=np.asarray(actions, dtype=np.float64),
        gt_return=gt,
        episode_id=eid,
        start=start,
    )


def make_pair(r1, r2, length=4, dim=2, seed=0, pid="0"):
    rng = np.random.default_rng(seed)
    seg1 = make_segment(rng.normal(size=(length, dim)), rng.normal(size=(length, dim)), gt=r1)
    seg2 = make_segment(rng.normal(size=(length, dim)), rng.normal(size=(length, dim)), gt=r2)
    return pref.QueryPair(id=pid, seg1=seg1, seg2=seg2)


def small_ensemble(seed=0, size=3, obs_dim=2, act_dim=2, hidden=(16,)):
    cfg = pref.RewardConfig(ensemble_size=size, hidden=hidden, minibatch=8)
    return pref.RewardEnsemble(obs_dim, act_dim, cfg, np.random.default_rng(seed))


def store_with_episodes(n_episodes=4, length=75, obs_dim=2, seed=0):
    store = pref.EpisodeStore()
    rng = np.random.default_rng(seed)
    for _ in range(n_episodes):
        positions = np.cumsum(rng.uniform(-0.1, 0.1, size=(length + 1, 2)), axis=0)
        store.add(
            states=positions[:-1][:, :obs_dim],
            actions=rng.uniform(-1, 1, size=(length, 2)),
            gts=rng.normal(size=length),
            positions=positions,
        )
    return store


class TestSampleQueries:
    def test_zero_count_gives_empty_list(self):
        store = store_with_episodes()
        assert pref.sample_queries(store, 25, 0, np.random.default_rng(0)) == []

    def test_valid_start_indices_range(self):
        store = store_with_episodes(n_episodes=1, length=75)
        rng = np.random.default_rng(1)
        pairs = pref.sample_queries(store, 25, 400, rng)
        starts = [p.seg1.start for p in pairs] + [p.seg2.start for p in pairs]
        assert min(starts) >= 0
        assert max(starts) <= 50
        assert set(starts) >= {0, 50}  # both ends reachable

    def test_fixed_seed_identical_ids_and_content(self):
        store = store_with_episodes()
        a = pref.sample_queries(store, 10, 5, np.random.default_rng(7), id_base=100)
        b = pref.sample_queries(store, 10, 5, np.random.default_rng(7), id_base=100)
        assert [p.id for p in a] == [p.id for p in b] == [str(100 + i) for i in range(5)]
        for pa, pb in zip(a, b):
            assert np.array_equal(pa.seg1.states, pb.seg1.states)

    def test_too_short_episodes_give_no_pairs(self):
        store = store_with_episodes(length=10)
        assert pref.sample_queries(store, 25, 4, np.random.default_rng(0)) == []


class TestSimulatedLabel:
    def test_prefers_larger_return(self):
        assert pref.simulated_label(make_pair(5.0, 3.0)) == (1.0, 0.0)
        assert pref.simulated_label(make_pair(3.0, 5.0)) == (0.0, 1.0)

    def test_tie_on_equality(self):
        assert pref.simulated_label(make_pair(2.0, 2.0)) == (0.5, 0.5)

    def test_hazard_avoider_preferred_under_distance_safe(self):
        # scripted trajectories: one cuts through a hazard, one detours
        cfg = envs.Nav2dConfig()
        through = np.stack([np.linspace(1.0, 2.5, 26), np.linspace(1.0, 2.5, 26)], axis=1)
        around = np.stack([np.linspace(1.0, 2.5, 26), np.full(26, 0.0)], axis=1)
        gt_through = envs.gt_reward_trajectory(cfg, through).sum()
        gt_around = envs.gt_reward_trajectory(cfg, around).sum()
        assert gt_around > gt_through  # oracle: detour wins
        pair = pref.QueryPair(
            id="h",
            seg1=make_segment(through[:-1], np.zeros((25, 2)), gt=gt_through),
            seg2=make_segment(around[:-1], np.zeros((25, 2)), gt=gt_around),
        )
        assert pref.simulated_label(pair) == (0.0, 1.0)


class TestBradleyTerry:
    def test_equal_returns_give_half(self):
        ens = small_ensemble()
        pair = make_pair(0, 0, seed=3)
        pair.seg2 = pair.seg1  # identical content => identical returns
        for m in ens.members:
            assert pref.bt_probability(m, pair) == pytest.approx(0.5, abs=1e-12)

    def test_log_three_difference_gives_three_quarters(self):
        # single linear member passing the state through: R(seg) = sum(s)
        m = ad.Mlp([2, 1])
        m.weights[0].data = np.array([[1.0], [0.0]])
        m.biases[0].data = np.zeros(1)
        pair = pref.QueryPair(
            id="x",
            seg1=make_segment([[np.log(3.0)]], [[0.0]]),
            seg2=make_segment([[0.0]], [[0.0]]),
        )
        assert pref.bt_probability(m, pair) == pytest.approx(0.75, abs=1e-12)

    def test_antisymmetry_over_random_pairs(self):
        ens = small_ensemble(seed=5)
        m = ens.members[0]
        for i in range(1000):
            pair = make_pair(0, 0, seed=i, pid=str(i))
            swapped = pref.QueryPair(id="s", seg1=pair.seg2, seg2=pair.seg1)
            assert pref.bt_probability(m, pair) + pref.bt_probability(m, swapped) == pytest.approx(
                1.0, abs=1e-12
            )


class TestRewardLoss:
    def test_zero_loss_when_winner_saturates(self):
        ens = small_ensemble(size=1, hidden=(4,), obs_dim=1, act_dim=1)
        m = ens.members[0]
        for p in m.parameters:
            p.data[...] = 0.0
        # identity on state: big positive return for seg1, negative for seg2
        m.weights[0].data[...] = 0.0
        pair = pref.QueryPair(
            id="0",
            seg1=make_segment([[1000.0]], [[0.0]]),
            seg2=make_segment([[-1000.0]], [[0.0]]),
            label=(1.0, 0.0),
        )
        m.weights[0].data[0, :] = 1.0
        m.weights[1].data[:, 0] = 1.0
        loss = pref.reward_loss(m, [pair])
        assert loss.item() == pytest.approx(0.0, abs=1e-12)

    def test_half_probability_label_one_gives_ln2(self):
        ens = small_ensemble(size=1, hidden=(4,))
        m = ens.members[0]
        for p in m.parameters:
            p.data[...] = 0.0
        pair = make_pair(0, 0)
        pair.label = (1.0, 0.0)
        loss = pref.reward_loss(m, [pair])
        assert loss.item() == pytest.approx(np.log(2.0), abs=1e-12)

    def test_gradient_matches_finite_differences(self):
        ens = small_ensemble(size=1, hidden=(8,), seed=9)
        m = ens.members[0]
        pairs = []
        for i in range(4):
            p = make_pair(0, 0, seed=20 + i, pid=str(i))
            p.label = [(1.0, 0.0), (0.0, 1.0), (0.5, 0.5), (1.0, 0.0)][i]
            pairs.append(p)

        def loss():
            return pref.reward_loss(m, pairs)

        assert ad.finite_diff_check(loss, m.parameters, h=1e-6) < 1e-4

    def test_loss_nonnegative(self):
        ens = small_ensemble(size=1, seed=11)
        m = ens.members[0]
        rng = np.random.default_rng(0)
        for i in range(20):
            p = make_pair(0, 0, seed=40 + i)
            p.label = [(1.0, 0.0), (0.0, 1.0), (0.5, 0.5)][rng.integers(0, 3)]
            assert pref.reward_loss(m, [p]).item() >= 0.0


class TestTrainReward:
    def test_single_pair_memorization(self):
        ens = small_ensemble(size=1, hidden=(16,), seed=2)
        buf = pref.PreferenceBuffer()
        pair = make_pair(0, 0, seed=1)
        pair.label = (1.0, 0.0)
        buf.append(pair)
        acc = pref.train_reward(ens, buf, epochs=200, rng=np.random.default_rng(0))
        assert acc == 1.0

    def test_linear_gt_heldout_accuracy(self):
        # teacher: reward = s[0]; segments of length 3 in 1-D state/action
        rng = np.random.default_rng(4)
        buf = pref.PreferenceBuffer()
        for i in range(200):
            s1 = rng.uniform(-1, 1, size=(3, 1))
            s2 = rng.uniform(-1, 1, size=(3, 1))
            a = np.zeros((3, 1))
            g1, g2 = float(s1.sum()), float(s2.sum())
            pair = pref.QueryPair(
                id=str(i),
                seg1=make_segment(s1, a, gt=g1),
                seg2=make_segment(s2, a, gt=g2),
                label=pref.simulated_label(
                    pref.QueryPair(id="t", seg1=make_segment(s1, a, gt=g1), seg2=make_segment(s2, a, gt=g2))
                ),
            )
            buf.append(pair)
        cfg = pref.RewardConfig(ensemble_size=3, hidden=(32,), minibatch=32)
        ens = pref.RewardEnsemble(1, 1, cfg, np.random.default_rng(5))
        acc = pref.train_reward(ens, buf, epochs=60, rng=np.random.default_rng(6))
        assert acc >= 0.95

    def test_training_is_deterministic(self):
        losses = []
        for _ in range(2):
            ens = small_ensemble(size=2, hidden=(8,), seed=3)
            buf = pref.PreferenceBuffer()
            for i in range(12):
                p = make_pair(0, 0, seed=60 + i, pid=str(i))
                p.label = (1.0, 0.0) if i % 2 else (0.0, 1.0)
                buf.append(p)
            pref.train_reward(ens, buf, epochs=5, rng=np.random.default_rng(8))
            losses.append(pref.reward_loss(ens.members[0], buf.pairs()).item())
        assert losses[0] == losses[1]


class TestPredictReward:
    def test_zero_members_give_zero(self):
        ens = small_ensemble()
        for m in ens.members:
            for p in m.parameters:
                p.data[...] = 0.0
        assert pref.predict_reward(ens, np.zeros((1, 2)), np.zeros((1, 2))) == 0.0

    def test_mean_of_member_outputs(self):
        ens = small_ensemble(size=3, hidden=(4,))
        for k, m in enumerate(ens.members, start=1):
            for p in m.parameters:
                p.data[...] = 0.0
            m.biases[-1].data[...] = float(k)
        out = pref.predict_reward(ens, np.zeros((4, 2)), np.zeros((4, 2)))
        assert np.allclose(out, 2.0)

    def test_single_member_matches_ensemble_of_one(self):
        ens = small_ensemble(size=1, seed=21)
        s = np.random.default_rng(0).normal(size=(3, 2))
        a = np.random.default_rng(1).normal(size=(3, 2))
        with ad.no_grad():
            direct = ens.members[0].forward(np.concatenate([s, a], axis=-1)).data[:, 0]
        assert np.allclose(pref.predict_reward(ens, s, a), direct)

    def test_member_permutation_invariance(self):
        ens = small_ensemble(size=3, seed=22)
        s = np.random.default_rng(2).normal(size=(5, 2))
        a = np.random.default_rng(3).normal(size=(5, 2))
        r1 = pref.predict_reward(ens, s, a)
        ens.members.reverse()
        r2 = pref.predict_reward(ens, s, a)
        assert np.allclose(r1, r2)


class TestImportExport:
    def test_empty_file_imports_zero(self, tmp_path):
        f = tmp_path / "labels.jsonl"
        f.write_text("")
        buf = pref.PreferenceBuffer()
        assert pref.import_human_labels(buf, [], f) == 0

    def test_round_trip_preserves_ids_and_count(self, tmp_path):
        store = store_with_episodes()
        pairs = pref.sample_queries(store, 10, 8, np.random.default_rng(0))
        qfile = tmp_path / "queries.jsonl"
        assert pref.export_queries(pairs, qfile) == 8
        loaded = pref.load_queries(qfile)
        assert [p.id for p in loaded] == [p.id for p in pairs]
        lfile = tmp_path / "labels.jsonl"
        with open(lfile, "w") as f:
            for p in loaded:
                f.write('{"id": "%s", "choice": "1"}\n' % p.id)
        buf = pref.PreferenceBuffer()
        assert pref.import_human_labels(buf, loaded, lfile) == 8
        assert all(p.source == "human" for p in buf.pairs())

    def test_skips_never_enter_buffer(self, tmp_path):
        store = store_with_episodes()
        pairs = pref.sample_queries(store, 10, 4, np.random.default_rng(0))
        lfile = tmp_path / "labels.jsonl"
        with open(lfile, "w") as f:
            f.write('{"id": "0", "choice": "1"}\n')
            f.write('{"id": "1", "choice": "skip"}\n')
            f.write('{"id": "2", "choice": "tie"}\n')
        buf = pref.PreferenceBuffer()
        assert pref.import_human_labels(buf, pairs, lfile) == 2

    def test_bad_label_value_rejects_whole_file(self, tmp_path):
        store = store_with_episodes()
        pairs = pref.sample_queries(store, 10, 2, np.random.default_rng(0))
        lfile = tmp_path / "labels.jsonl"
        with open(lfile, "w") as f:
            f.write('{"id": "0", "choice": "1"}\n')
            f.write('{"id": "1", "choice": "2.0"}\n')
        buf = pref.PreferenceBuffer()
        with pytest.raises(ValueError, match="line 2"):
            pref.import_human_labels(buf, pairs, lfile)
        assert len(buf) == 0


class TestSchedule:
    def test_budget_conservation_across_budgets(self):
        for budget in (40, 160, 640, 1280):
            sched = pref.FeedbackSchedule(total_budget=budget)
            consumed = 0
            for _ in sched.session_steps():
                take = min(sched.queries_per_session, sched.budget - consumed)
                consumed += max(take, 0)
            assert consumed <= budget
            assert consumed == min(budget, sched.sessions * sched.queries_per_session)

    def test_session_steps_strictly_increasing(self):
        sched = pref.FeedbackSchedule(start_step=100, frequency=50, sessions=5)
        steps = sched.session_steps()
        assert steps == [100, 150, 200, 250, 300]
