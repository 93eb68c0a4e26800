import numpy as np
import pytest

from lowrank_bandit.environment import (
    ArmDistribution,
    DecisionSet,
    EnvironmentReplay,
    NoiseSpec,
    RngStream,
    TaskMatrixSpec,
    best_arm,
    generate_task_matrix,
    sample_decision_sets,
)
from lowrank_bandit.errors import ConfigError
from lowrank_bandit.linalg import singular_values


class TestTaskMatrix:
    def test_rank_one_columns_parallel(self):
        spec = TaskMatrixSpec(dim=6, n_tasks=4, rank=1)
        w = generate_task_matrix(spec, RngStream(0))
        cols = w / np.linalg.norm(w, axis=0)
        dots = np.abs(cols.T @ cols)
        assert np.allclose(dots, 1.0, atol=1e-9)

    def test_full_rank(self):
        spec = TaskMatrixSpec(dim=5, n_tasks=7, rank=5)
        w = generate_task_matrix(spec, RngStream(1))
        assert np.sum(singular_values(w) > 1e-10) == 5

    def test_rank_and_norm_cap(self):
        spec = TaskMatrixSpec(dim=20, n_tasks=30, rank=5, column_norm_cap=2.5)
        w = generate_task_matrix(spec, RngStream(2))
        s = singular_values(w)
        assert np.sum(s > 1e-10) == 5
        norms = np.linalg.norm(w, axis=0)
        assert np.all(norms <= 2.5 + 1e-12)
        assert norms.max() == pytest.approx(2.5)

    def test_invalid_rank(self):
        with pytest.raises(ConfigError):
            TaskMatrixSpec(dim=3, n_tasks=2, rank=4)

    def test_deterministic(self):
        spec = TaskMatrixSpec(dim=4, n_tasks=4, rank=2)
        a = generate_task_matrix(spec, RngStream(3))
        b = generate_task_matrix(spec, RngStream(3))
        assert a.tobytes() == b.tobytes()


class TestArmDistribution:
    def test_gaussian_iid_moments(self):
        dist = ArmDistribution("gaussian_iid", dim=20, n_arms=10)
        sets = sample_decision_sets(dist, 500, RngStream(4))
        draws = np.concatenate([s.arms for s in sets])  # 5000 x 20
        # top up to 1e5 draws
        more = sample_decision_sets(dist, 9500, RngStream(5))
        draws = np.concatenate([draws] + [s.arms for s in more])
        assert draws.shape[0] == 100_000
        assert np.max(np.abs(draws.mean(axis=0))) < 0.02
        cov = draws.T @ draws / draws.shape[0]
        assert np.linalg.norm(cov - np.eye(20), 2) < 0.05

    def test_correlated_moments(self):
        dist = ArmDistribution("gaussian_correlated", dim=8, n_arms=4)
        target = dist.covariances[0]
        sets = sample_decision_sets(dist, 25_000, RngStream(6))
        draws = np.concatenate([s.arms for s in sets])
        cov = draws.T @ draws / draws.shape[0]
        assert np.linalg.norm(cov - target, 2) < 0.05

    def test_correlated_user_covariances(self):
        d = 4
        covs = [np.diag([4.0, 1.0, 1.0, 1.0]), np.eye(d)]
        dist = ArmDistribution("gaussian_correlated", dim=d, n_arms=2, covariances=covs)
        assert dist.sigma_op_max == pytest.approx(2.0)
        sets = sample_decision_sets(dist, 50_000, RngStream(20))
        first = np.stack([s.arms[0] for s in sets])
        cov = first.T @ first / first.shape[0]
        assert np.linalg.norm(cov - covs[0], 2) < 0.1

    def test_uniform_sphere_unit_norm(self):
        dist = ArmDistribution("uniform_sphere", dim=7, n_arms=5)
        sets = sample_decision_sets(dist, 50, RngStream(7))
        for s in sets:
            assert np.allclose(np.linalg.norm(s.arms, axis=1), 1.0)

    @pytest.mark.parametrize("kind", ["gaussian_iid", "gaussian_correlated", "uniform_sphere"])
    def test_symmetry_negating_z_negates_arm(self, kind):
        dist = ArmDistribution(kind, dim=6, n_arms=3)
        z = np.random.default_rng(8).standard_normal((3, 6))
        assert np.allclose(dist.arms_from_z(-z), -dist.arms_from_z(z))

    def test_bad_covariance_rejected(self):
        asym = np.eye(3)
        asym[0, 1] = 0.5
        with pytest.raises(ConfigError):
            ArmDistribution("gaussian_correlated", dim=3, n_arms=1, covariances=[asym])
        neg = -np.eye(3)
        with pytest.raises(ConfigError):
            ArmDistribution("gaussian_correlated", dim=3, n_arms=1, covariances=[neg])

    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            ArmDistribution("cauchy", dim=3, n_arms=2)

    def test_sigma_op_max(self):
        dist = ArmDistribution("gaussian_iid", dim=4, n_arms=2)
        assert dist.sigma_op_max == pytest.approx(1.0)
        sphere = ArmDistribution("uniform_sphere", dim=4, n_arms=2)
        assert sphere.sigma_op_max == pytest.approx(0.5)


class TestReward:
    def test_noiseless(self):
        from lowrank_bandit.environment import reward

        x = np.array([1.0, 2.0])
        w = np.array([3.0, -1.0])
        assert reward(x, w, NoiseSpec(0.0), RngStream(9)) == pytest.approx(1.0)

    def test_pure_noise_std(self):
        from lowrank_bandit.environment import reward

        g = RngStream(10).generator()
        draws = np.array(
            [reward(np.zeros(3), np.zeros(3), NoiseSpec(2.0), g) for _ in range(100_000)]
        )
        assert abs(draws.std() - 2.0) / 2.0 < 0.02

    def test_replay_identical(self):
        from lowrank_bandit.environment import reward

        a = [reward(np.ones(2), np.ones(2), NoiseSpec(1.0), RngStream(11).generator())
             for _ in range(1)]
        b = [reward(np.ones(2), np.ones(2), NoiseSpec(1.0), RngStream(11).generator())
             for _ in range(1)]
        assert a == b


class TestBestArm:
    def test_single_arm(self):
        ds = DecisionSet(np.ones((1, 3)))
        idx, val = best_arm(ds, np.ones(3))
        assert idx == 0 and val == pytest.approx(3.0)

    def test_total_tie_smallest_index(self):
        ds = DecisionSet(np.random.default_rng(12).standard_normal((5, 3)))
        idx, val = best_arm(ds, np.zeros(3))
        assert idx == 0 and val == 0.0

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_exhaustive_scan(self, seed):
        rng = np.random.default_rng(seed)
        ds = DecisionSet(rng.standard_normal((8, 4)))
        w = rng.standard_normal(4)
        idx, val = best_arm(ds, w)
        scores = [float(a @ w) for a in ds.arms]  # per-row dots: independent path
        assert val == pytest.approx(max(scores), rel=1e-12)
        assert idx == scores.index(max(scores))  # generic draws: unique argmax


class TestReplay:
    def make(self, rep=0, fix=False, seed=99):
        spec = TaskMatrixSpec(dim=6, n_tasks=4, rank=2)
        dist = ArmDistribution("gaussian_iid", dim=6, n_arms=3)
        return EnvironmentReplay(spec, dist, n_rounds=5, noise=NoiseSpec(1.0),
                                 master_seed=seed, repetition=rep, fix_task_matrix=fix)

    def test_bitwise_replay(self):
        a = self.make()
        b = self.make()
        assert a.task_matrix.tobytes() == b.task_matrix.tobytes()
        assert a.noise.tobytes() == b.noise.tobytes()
        assert a.arm_stream_checksum() == b.arm_stream_checksum()
        assert np.array_equal(a.round_one_choices, b.round_one_choices)

    def test_repetitions_differ(self):
        a = self.make(rep=0)
        b = self.make(rep=1)
        assert a.task_matrix.tobytes() != b.task_matrix.tobytes()
        assert a.arm_stream_checksum() != b.arm_stream_checksum()

    def test_fixed_task_matrix_shared(self):
        a = self.make(rep=0, fix=True)
        b = self.make(rep=3, fix=True)
        assert a.task_matrix.tobytes() == b.task_matrix.tobytes()
        assert a.noise.tobytes() != b.noise.tobytes()

    def test_shapes(self):
        r = self.make()
        sets = r.decision_sets(1)
        assert len(sets) == 4
        assert sets[0].arms.shape == (3, 6)
        assert r.noise_at(5).shape == (4,)
