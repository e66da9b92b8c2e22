"""Toy-world tests: projection statistics, subspace recovery, reward models,
planning, and the noise-condition comparison harness."""

import numpy as np
import pytest

from maskrl import toylab
from maskrl.numerics import Rng
from maskrl.toylab import (RewardModel, ToyWorldSpec, fit_action_effect,
                           fit_latents, fit_reward_model, mpc_plan,
                           principal_angles, sample_observation)


def build_spec(sigma_r=0.05, sigma_e=0.5, eps=0.1, seed=0):
    return ToyWorldSpec.build(Rng(seed).split("spec"), sigma_r, sigma_e, eps_scale=eps)


class TestSpec:
    def test_projection_isometry(self):
        spec = build_spec()
        rng = np.random.default_rng(1)
        for _ in range(20):
            v = rng.standard_normal(7)
            assert np.linalg.norm(spec.Q @ v) == pytest.approx(np.linalg.norm(v), rel=1e-10)
            u = rng.standard_normal(2)
            assert np.linalg.norm(spec.Q2 @ u) == pytest.approx(np.linalg.norm(u), rel=1e-10)

    def test_negative_sigma_rejected(self):
        with pytest.raises(ValueError):
            ToyWorldSpec.build(Rng(0).split("s"), -0.1, 0.5)


class TestSampleObservation:
    def test_noiseless_is_exact_projection(self):
        spec = build_spec(sigma_r=0.0, sigma_e=0.0, eps=0.0)
        state = toylab.reset_state(Rng(2).split("st"))
        x, x_r, z = sample_observation(spec, state, Rng(3).split("obs"))
        np.testing.assert_allclose(x, spec.Q @ state, atol=1e-12)
        np.testing.assert_allclose(x_r, spec.Q2 @ state[:2], atol=1e-12)
        np.testing.assert_allclose(z, state, atol=1e-12)

    def test_monte_carlo_mean(self):
        spec = build_spec(sigma_r=0.1, sigma_e=0.3, eps=0.2)
        state = toylab.reset_state(Rng(4).split("st"))
        rng = Rng(5).split("mc")
        n = 100_000
        xs = np.array([sample_observation(spec, state, rng)[0] for _ in range(n)])
        expected = spec.Q @ state
        # per-coordinate std of X <= sqrt(sigma_e^2 + eps^2)
        tol = 3 * np.sqrt(0.3 ** 2 + 0.2 ** 2) / np.sqrt(n)
        assert np.max(np.abs(xs.mean(axis=0) - expected)) < 4 * tol

    def test_monte_carlo_covariance(self):
        spec = build_spec(sigma_r=0.2, sigma_e=0.4, eps=0.15)
        state = toylab.reset_state(Rng(6).split("st"))
        rng = Rng(7).split("cov")
        n = 60_000
        xs = np.array([sample_observation(spec, state, rng)[0] for _ in range(n)])
        emp = np.cov(xs.T)
        lat = np.diag([0.2 ** 2] * 2 + [0.4 ** 2] * 5)
        closed = spec.Q @ lat @ spec.Q.T + 0.15 ** 2 * np.eye(spec.Q.shape[0])
        assert np.abs(emp - closed).max() < 0.01


class TestPrincipalAngles:
    def test_identical_subspace(self):
        basis = np.random.default_rng(8).standard_normal((2, 10))
        assert principal_angles(basis, 2.5 * basis).max() < 1e-8

    def test_orthogonal_subspaces(self):
        a = np.zeros((1, 4)); a[0, 0] = 1
        b = np.zeros((1, 4)); b[0, 2] = 1
        assert principal_angles(a, b)[0] == pytest.approx(np.pi / 2)


class TestFitLatents:
    def collect(self, spec, n=2000, seed=9):
        rng = Rng(seed).split("collect")
        xs, xrs = [], []
        for _ in range(n):
            state = toylab.reset_state(rng)
            x, x_r, _ = sample_observation(spec, state, rng)
            xs.append(x)
            xrs.append(x_r)
        return np.array(xs), np.array(xrs)

    def test_noiseless_recovers_projection_subspace(self):
        spec = build_spec(sigma_r=0.0, sigma_e=0.0, eps=0.0)
        xs, _ = self.collect(spec)
        rec = fit_latents(xs, mode="joint", k=7)
        assert rec.recon_error < 1e-20
        angles = principal_angles(rec.components, spec.Q.T)
        assert angles.max() < 1e-6

    def test_dominant_env_noise_drops_agent_directions(self):
        spec = build_spec(sigma_r=0.01, sigma_e=0.8, eps=0.05)
        xs, xrs = self.collect(spec, n=4000)
        rec = fit_latents(xs, xrs, mode="split", k=5)
        env_dirs = (spec.Q[:, 2:]).T            # spanned by environment dims
        agent_dirs = (spec.Q[:, :2]).T
        env_angle = principal_angles(rec.components, env_dirs).max()
        agent_angle = principal_angles(rec.components[:5], agent_dirs).min()
        assert env_angle < 0.15                  # env subspace recovered
        assert agent_angle > 0.5                 # agent directions poorly covered
        # ... while the split path recovers the agent subspace exactly
        split_angle = principal_angles(rec.components_r, spec.Q2.T).max()
        assert split_angle < 0.1

    def test_too_few_samples(self):
        spec = build_spec()
        xs, _ = self.collect(spec, n=30)
        with pytest.raises(ValueError):
            fit_latents(xs, mode="joint", k=5)

    def test_rank_deficient_warns(self):
        xs = np.zeros((200, 16))
        with pytest.warns(RuntimeWarning):
            fit_latents(xs, mode="joint", k=3)


class TestRewardModel:
    def test_constant_reward(self):
        rng = np.random.default_rng(10)
        u = rng.standard_normal((500, 4))
        r = np.full(500, 0.37)
        model = fit_reward_model(u, r, "quadratic")
        assert model.val_mse < 1e-20
        np.testing.assert_allclose(model.predict(u[:10]), 0.37, atol=1e-9)

    def test_quadratic_recovered_exactly(self):
        rng = np.random.default_rng(11)
        u = rng.standard_normal((800, 3))
        W = rng.standard_normal((3, 3))
        W = (W + W.T) / 2
        b = rng.standard_normal(3)
        r = np.einsum("ni,ij,nj->n", u, W, u) + u @ b + 1.5
        model = fit_reward_model(u, r, "quadratic")
        np.testing.assert_allclose(model.predict(u), r, atol=1e-8)

    def test_block_spectra_logged_for_split(self):
        rng = np.random.default_rng(12)
        u = rng.standard_normal((400, 6))
        r = (u ** 2).sum(axis=1)
        model = fit_reward_model(u, r, "quadratic", split_dim=4)
        assert set(model.block_spectra) == {"base_block", "agent_block", "coupling_block"}

    def test_mlp_flavor_trains(self):
        rng = np.random.default_rng(13)
        u = rng.standard_normal((600, 3))
        r = np.tanh(u.sum(axis=1))
        model = fit_reward_model(u, r, "mlp", rng=Rng(14).split("mlp"))
        assert model.val_mse < 0.05

    def test_split_val_mse_not_worse_under_env_noise(self):
        # median over 5 seeds of validation MSE: V(z, z_R) <= V(z)
        joint_mse, split_mse = [], []
        for seed in range(5):
            res = toylab.run_condition(0.05, 0.5, seed, "quadratic", eval_episodes=2)
            joint_mse.append(res["joint_val_mse"])
            split_mse.append(res["split_val_mse"])
        assert np.median(split_mse) <= np.median(joint_mse)


class TrueStateRewardModel:
    """Oracle for planner tests: predicts the true reward from the true state."""

    def predict(self, states):
        return np.array([toylab.true_reward(s) for s in states])


class TestMpcPlan:
    def test_single_candidate_returns_its_first_action(self):
        rng1 = Rng(15).split("p")
        rng2 = Rng(15).split("p")
        model = TrueStateRewardModel()
        effect = np.zeros((7, 2))
        latent = toylab.reset_state(Rng(16).split("s"))
        action = mpc_plan(model, effect, latent, horizon=3, candidates=1, rng=rng1)
        seqs = rng2.uniform(-1.0, 1.0, (1, 3, 2))
        np.testing.assert_array_equal(action, seqs[0, 0, :])

    def test_deterministic_given_seed(self):
        model = TrueStateRewardModel()
        effect = np.vstack([np.eye(2) * toylab.ACTION_GAIN, np.zeros((5, 2))])
        latent = toylab.reset_state(Rng(17).split("s"))
        a1 = mpc_plan(model, effect, latent, 5, 64, Rng(18).split("p"))
        a2 = mpc_plan(model, effect, latent, 5, 64, Rng(18).split("p"))
        np.testing.assert_array_equal(a1, a2)

    def test_planner_halves_final_distance_vs_random(self):
        model = TrueStateRewardModel()
        effect = np.vstack([np.eye(2) * toylab.ACTION_GAIN, np.zeros((5, 2))])
        rng = Rng(19).split("sim")
        planned, random_ = [], []
        for ep in range(20):
            state = toylab.reset_state(rng)
            s_plan = state.copy()
            s_rand = state.copy()
            for _ in range(toylab.EPISODE_STEPS):
                a = mpc_plan(model, effect, s_plan, 10, 128, rng)
                s_plan = toylab.step_state(s_plan, a)
                s_rand = toylab.step_state(s_rand, rng.uniform(-1, 1, 2))
            planned.append(toylab.goal_distance(s_plan))
            random_.append(toylab.goal_distance(s_rand))
        assert np.median(planned) <= 0.5 * np.median(random_)

    def test_bad_arguments(self):
        with pytest.raises(ValueError):
            mpc_plan(TrueStateRewardModel(), np.zeros((7, 2)),
                     np.zeros(7), horizon=0, candidates=4, rng=Rng(0).split("x"))


class TestActionEffect:
    def test_recovers_linear_map(self):
        rng = np.random.default_rng(20)
        D_true = rng.standard_normal((4, 2)) * 0.1
        actions = rng.uniform(-1, 1, (500, 2))
        z = rng.standard_normal((500, 4))
        z_next = z + actions @ D_true.T
        D = fit_action_effect(z, z_next, actions)
        np.testing.assert_allclose(D, D_true, atol=1e-10)


class TestRunCondition:
    def test_deterministic(self):
        a = toylab.run_condition(0.2, 0.2, seed=3, eval_episodes=3)
        b = toylab.run_condition(0.2, 0.2, seed=3, eval_episodes=3)
        assert a == b

    def test_zero_noise_parity(self):
        res = [toylab.run_condition(0.0, 0.0, seed=s, eval_episodes=6)
               for s in range(3)]
        joint = np.median([r["joint"] for r in res])
        split = np.median([r["split"] for r in res])
        assert abs(joint - split) / max(joint, split) < 0.15

    def test_table_writer(self, tmp_path):
        table = toylab.run_table1(seeds=5, eval_episodes=2,
                                  out_path=tmp_path / "table.json")
        assert (tmp_path / "table.json").exists()
        txt = (tmp_path / "table.txt").read_text()
        assert "env>agent" in txt and "V(z,z_R)" in txt
        assert set(table) == set(toylab.SIGMA_CONDITIONS)
