import numpy as np
import pytest

from hasd import envs
from hasd import evaluation as ev
from hasd import sac
from hasd import trainer as tr

from helpers import brute_force_pareto, mc_hypervolume


def stationary_rollout(pos, steps=75, alpha=0.0, cfg=None):
    cfg = cfg or envs.Nav2dConfig()
    positions = np.tile(np.asarray(pos, dtype=np.float64), (steps + 1, 1))
    gts = envs.gt_reward_trajectory(cfg, positions)
    costs = envs.in_hazard(cfg, positions[1:]).astype(np.float64)
    return ev.SkillRollout(
        z=np.array([1.0, 0.0]), alpha=alpha, positions=positions, gt_rewards=gts, costs=costs
    )


def line_rollout(points, cfg=None):
    cfg = cfg or envs.Nav2dConfig()
    positions = np.asarray(points, dtype=np.float64)
    gts = envs.gt_reward_trajectory(cfg, positions)
    costs = envs.in_hazard(cfg, positions[1:]).astype(np.float64)
    return ev.SkillRollout(
        z=np.array([1.0, 0.0]), alpha=0.0, positions=positions, gt_rewards=gts, costs=costs
    )


def make_point(cov, align, **kw):
    p = ev.SolutionPoint(
        method=kw.get("method", "m"),
        alpha=kw.get("alpha", 0.0),
        seed=kw.get("seed", 0),
        coverage_raw=int(cov * 1000),
        alignment_raw=align,
        cost=0.0,
    )
    p.coverage = cov
    p.alignment = align
    return p


class TestCoverage:
    def test_single_stationary_trajectory_is_one_bin(self):
        assert ev.coverage([stationary_rollout([0.55, 0.55])]) == 1

    def test_straight_line_eleven_bins(self):
        # positions 0.0, 0.1, ..., 1.0 at y=0: enumeration oracle
        pts = [[0.1 * k, 0.0] for k in range(11)]
        expected = {(int(np.floor(x / 0.1)), 0) for x, _ in pts}
        assert len(expected) == 11
        assert ev.coverage([line_rollout(pts)]) == 11

    def test_union_subadditive(self):
        a = [line_rollout([[0.0, 0.0], [0.5, 0.0]])]
        b = [line_rollout([[0.3, 0.0], [0.8, 0.0]])]
        assert ev.coverage(a + b) <= ev.coverage(a) + ev.coverage(b)

    def test_order_and_duplication_invariant(self):
        a = line_rollout([[0.0, 0.0], [1.0, 1.0]])
        b = line_rollout([[-1.0, 0.5], [0.2, -0.3]])
        assert ev.coverage([a, b]) == ev.coverage([b, a]) == ev.coverage([a, b, a])

    def test_against_enumeration_oracle_on_random_trajectories(self):
        rng = np.random.default_rng(0)
        cfg = envs.Nav2dConfig()
        rollouts = []
        oracle_bins = set()
        for _ in range(100):
            pts = np.cumsum(rng.uniform(-0.2, 0.2, size=(20, 2)), axis=0)
            rollouts.append(line_rollout(pts, cfg))
            for x, y in pts:  # independent recount, one position at a time
                oracle_bins.add((int(np.floor(x / 0.1)), int(np.floor(y / 0.1))))
        assert ev.coverage(rollouts) == len(oracle_bins)


class TestAlignmentAndCost:
    def test_stationary_safe_rollout_scores_zero(self):
        assert ev.alignment([stationary_rollout([0.0, 0.0])]) == 0.0
        assert ev.cost([stationary_rollout([0.0, 0.0])]) == 0.0

    def test_pinned_in_hazard_scores_minus_75(self):
        r = stationary_rollout([1.75, 1.75])
        assert ev.alignment([r]) == -75.0
        assert ev.cost([r]) == 75.0

    def test_alignment_matches_reexport_recomputation(self, tmp_path):
        rng = np.random.default_rng(1)
        cfg = envs.Nav2dConfig()
        rollouts = [
            line_rollout(np.cumsum(rng.uniform(-0.12, 0.12, size=(76, 2)), axis=0), cfg)
            for _ in range(5)
        ]
        ev.export_plot_data(rollouts, [], tmp_path, cfg)
        again = ev.load_trajectories(tmp_path / "trajectories.jsonl")
        recomputed = np.mean(
            [envs.gt_reward_trajectory(cfg, r.positions).sum() for r in again]
        )
        assert recomputed == pytest.approx(ev.alignment(rollouts), abs=1e-9)


class TestPareto:
    def test_single_point_kept(self):
        pts = [make_point(0.5, 0.5)]
        assert ev.pareto_filter(pts) == pts

    def test_mutually_nondominated_all_kept(self):
        pts = [make_point(1, 0), make_point(0, 1), make_point(0.5, 0.5)]
        assert len(ev.pareto_filter(pts)) == 3

    def test_duplicates_of_front_points_survive(self):
        pts = [make_point(1, 1), make_point(1, 1), make_point(0, 0)]
        assert len(ev.pareto_filter(pts)) == 2

    def test_matches_brute_force_on_random_sets(self):
        rng = np.random.default_rng(2)
        for trial in range(20):
            pts = [make_point(x, y) for x, y in rng.uniform(0, 1, size=(100, 2))]
            got = {(p.coverage, p.alignment) for p in ev.pareto_filter(pts)}
            keep = brute_force_pareto([(p.coverage, p.alignment) for p in pts])
            expected = {(pts[i].coverage, pts[i].alignment) for i in keep}
            assert got == expected

    def test_idempotent(self):
        rng = np.random.default_rng(3)
        pts = [make_point(x, y) for x, y in rng.uniform(0, 1, size=(50, 2))]
        once = ev.pareto_filter(pts)
        twice = ev.pareto_filter(once)
        assert {(p.coverage, p.alignment) for p in once} == {
            (p.coverage, p.alignment) for p in twice
        }
        assert len(once) == len(twice)


class TestHypervolume:
    def test_unit_square(self):
        assert ev.hypervolume_2d([make_point(1, 1)]) == pytest.approx(1.0)

    def test_empty_is_zero(self):
        assert ev.hypervolume_2d([]) == 0.0

    def test_two_point_staircase_against_monte_carlo(self):
        pts = [make_point(0.5, 1.0), make_point(1.0, 0.5)]
        hv = ev.hypervolume_2d(pts)
        assert hv == pytest.approx(0.75, abs=1e-12)
        mc = mc_hypervolume([(0.5, 1.0), (1.0, 0.5)], n_samples=1_000_000)
        assert abs(hv - mc) < 0.003

    def test_point_below_reference_is_hard_error(self):
        with pytest.raises(ValueError):
            ev.hypervolume_2d([make_point(0.5, -0.1)])

    def test_adding_dominated_point_leaves_hv_unchanged(self):
        base = [make_point(0.8, 0.6), make_point(0.4, 0.9)]
        hv1 = ev.hypervolume_2d(base)
        hv2 = ev.hypervolume_2d(base + [make_point(0.3, 0.5)])
        assert hv1 == hv2

    def test_adding_dominating_point_strictly_increases_hv(self):
        base = [make_point(0.8, 0.6)]
        hv1 = ev.hypervolume_2d(base)
        hv2 = ev.hypervolume_2d(base + [make_point(0.9, 0.7)])
        assert hv2 > hv1

    def test_random_fronts_against_monte_carlo(self):
        rng = np.random.default_rng(4)
        for trial in range(5):
            coords = rng.uniform(0.05, 1.0, size=(12, 2))
            pts = [make_point(x, y) for x, y in coords]
            hv = ev.hypervolume_2d(pts)
            mc = mc_hypervolume(coords, n_samples=400_000, seed=trial)
            assert abs(hv - mc) < 0.005


class TestNormalization:
    def test_coverage_normalizer_counts_room_bins(self):
        cfg = envs.Nav2dConfig()
        total = ev.total_room_bins(cfg)
        # area of radius-4 disc is ~50.27; bins are 0.01 each
        assert 4800 < total < 5300

    def test_alignment_minmax_and_clipping(self):
        pts = [make_point(0.1, a) for a in (0.0, 5.0, 10.0)]
        for p in pts:
            p.alignment_raw = p.alignment
        ev.normalize_points(pts, envs.Nav2dConfig())
        assert pts[0].alignment == 0.0
        assert pts[1].alignment == pytest.approx(0.5)
        assert pts[2].alignment == 1.0
        assert all(p.anchors["alignment_hi"] == 10.0 for p in pts)

    def test_explicit_anchors_respected(self):
        pts = [make_point(0.1, 2.0)]
        pts[0].alignment_raw = 2.0
        ev.normalize_points(pts, envs.Nav2dConfig(), align_lo=0.0, align_hi=4.0)
        assert pts[0].alignment == pytest.approx(0.5)


class TestRolloutsAndExport:
    def make_policy_cfg(self, seed=0):
        cfg = tr.TrainerConfig(
            mode="lsd",
            total_steps=75,
            seed=seed,
            env=envs.Nav2dConfig(),
            sac=sac.SacConfig(hidden=(8, 8), batch_size=8, learning_starts=8),
            schedule=tr.AlphaSchedule(c=0.0, mode="fixed"),
        )
        policy = sac.SkillPolicy(cfg.augmented_dim, 2, cfg.sac.hidden, np.random.default_rng(seed))
        return policy, cfg

    def test_zero_skills_empty(self):
        policy, cfg = self.make_policy_cfg()
        assert ev.rollout_skills(policy, cfg, 0, 0.0, seed=1) == []

    def test_same_seed_identical_rollouts(self):
        policy, cfg = self.make_policy_cfg()
        a = ev.rollout_skills(policy, cfg, 3, 0.0, seed=7)
        b = ev.rollout_skills(policy, cfg, 3, 0.0, seed=7)
        for ra, rb in zip(a, b):
            assert np.array_equal(ra.positions, rb.positions)

    def test_zero_weight_policy_stays_at_start(self):
        policy, cfg = self.make_policy_cfg()
        for p in policy.net.parameters:
            p.data[...] = 0.0
        rollouts = ev.rollout_skills(policy, cfg, 2, 0.0, seed=3)
        for r in rollouts:
            assert np.allclose(r.positions, 0.0)

    def test_batched_rollout_matches_scalar_env(self):
        policy, cfg = self.make_policy_cfg(seed=5)
        rollouts = ev.rollout_skills(policy, cfg, 1, 0.0, seed=11)
        r = rollouts[0]
        # oracle: replay the same skill through the stepped scalar env
        state = envs.reset(cfg.env)
        for t in range(cfg.env.max_steps):
            obs = state.observation()
            aug = tr.augment_observation(obs, r.z, 0.0, cfg.schedule.mode)
            action, _ = policy.act(aug, deterministic=True)
            state, trn = envs.step(cfg.env, state, action)
            assert np.allclose(state.pos, r.positions[t + 1], atol=1e-12)
            assert trn.info["gt_reward"] == pytest.approx(r.gt_rewards[t], abs=1e-9)
            assert trn.info["cost"] == r.costs[t]

    def test_export_empty_inputs_valid_files(self, tmp_path):
        ev.export_plot_data([], [], tmp_path, envs.Nav2dConfig(), hypervolume=0.0)
        assert (tmp_path / "trajectories.jsonl").read_text() == ""
        assert (tmp_path / "solutions.csv").read_text().startswith("method,")
        assert (tmp_path / "front.csv").exists()
        assert (tmp_path / "hypervolume.txt").read_text().strip() == "0.0"
        assert "<svg" in (tmp_path / "skills.svg").read_text()

    def test_svg_one_polyline_per_rollout(self, tmp_path):
        rollouts = [stationary_rollout([0.0, 0.0]), stationary_rollout([1.0, 1.0])]
        ev.export_plot_data(rollouts, [], tmp_path, envs.Nav2dConfig())
        svg = (tmp_path / "skills.svg").read_text()
        assert svg.count("<polyline") == 2
