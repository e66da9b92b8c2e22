"""Linear-Gaussian toy world: a 2D point mass whose state is observed only
through a noisy high-dimensional projection, plus an optional clean
projection of the agent coordinates alone.

The pipeline mirrors the deep agent at desk scale: recover latents from
observations (truncated PCA), learn a reward model on the recovered
latents, then control with random-shooting MPC over a learned linear
action-effect map. Comparing a reward model on the joint recovery V(z)
against one that also sees the separately recovered agent latent
V(z, z_R) shows when the split representation buys control performance:
exactly when environment noise dominates agent noise, the truncated joint
recovery drops the low-variance agent directions.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .numerics import Rng

TRUE_DIM = 7          # agent (2) + goal (2) + obstacle position (2) + size (1)
AGENT_DIM = 2
ACTION_GAIN = 0.1
EPISODE_STEPS = 25
ATTRACT_ALPHA = 5.0
REPULSE_BETA = 0.5

SIGMA_CONDITIONS = {
    "env>agent": (0.05, 0.5),
    "env=agent": (0.2, 0.2),
    "env<agent": (0.5, 0.05),
}


def random_orthonormal(rng: Rng, rows: int, cols: int) -> np.ndarray:
    a = rng.normal(0.0, 1.0, (rows, cols))
    q, r = np.linalg.qr(a)
    return q * np.sign(np.diag(r))


@dataclass
class ToyWorldSpec:
    sigma_r: float
    sigma_e: float
    eps_scale: float
    Q: np.ndarray    # (d_obs, 7), orthonormal columns
    Q2: np.ndarray   # (d_r, 2), orthonormal columns

    @classmethod
    def build(cls, rng: Rng, sigma_r: float, sigma_e: float,
              d_obs: int = 64, d_r: int = 16, eps_scale: float = 0.1) -> "ToyWorldSpec":
        if sigma_r < 0 or sigma_e < 0:
            raise ValueError("noise scales must be non-negative")
        spec = cls(sigma_r=sigma_r, sigma_e=sigma_e, eps_scale=eps_scale,
                   Q=random_orthonormal(rng.split("Q"), d_obs, TRUE_DIM),
                   Q2=random_orthonormal(rng.split("Q2"), d_r, AGENT_DIM))
        assert np.allclose(spec.Q.T @ spec.Q, np.eye(TRUE_DIM), atol=1e-10)
        assert np.allclose(spec.Q2.T @ spec.Q2, np.eye(AGENT_DIM), atol=1e-10)
        return spec


def reset_state(rng: Rng) -> np.ndarray:
    """True state: [agent(2), goal(2), obstacle(2), obstacle_size(1)]."""
    agent = rng.uniform(0.1, 0.9, 2)
    goal = rng.uniform(0.1, 0.9, 2)
    obstacle = rng.uniform(0.1, 0.9, 2)
    size = rng.uniform(0.06, 0.12, 1)
    return np.concatenate([agent, goal, obstacle, size])


def step_state(state: np.ndarray, action: np.ndarray) -> np.ndarray:
    nxt = state.copy()
    nxt[:2] = np.clip(state[:2] + ACTION_GAIN * np.clip(action, -1, 1), 0.0, 1.0)
    return nxt


def true_reward(state: np.ndarray) -> float:
    d_goal = float(np.linalg.norm(state[:2] - state[2:4]))
    d_obs = float(np.linalg.norm(state[:2] - state[4:6]))
    return math.exp(-ATTRACT_ALPHA * d_goal) - REPULSE_BETA * math.exp(-d_obs / state[6])


def goal_distance(state: np.ndarray) -> float:
    return float(np.linalg.norm(state[:2] - state[2:4]))


def sample_observation(spec: ToyWorldSpec, state: np.ndarray, rng: Rng):
    """(X, X_R, z): noisy projected observation, clean agent projection,
    and the noisy latent that generated them."""
    z_r = state[:2] + spec.sigma_r * rng.normal(0.0, 1.0, AGENT_DIM)
    z_e = state[2:] + spec.sigma_e * rng.normal(0.0, 1.0, TRUE_DIM - AGENT_DIM)
    z = np.concatenate([z_r, z_e])
    x = spec.Q @ z + spec.eps_scale * rng.normal(0.0, 1.0, spec.Q.shape[0])
    x_r = spec.Q2 @ z_r
    return x, x_r, z


# ---------------------------------------------------------------------------
# latent recovery (truncated PCA / linear autoencoder)
# ---------------------------------------------------------------------------

@dataclass
class LatentRecovery:
    mean: np.ndarray
    components: np.ndarray            # (k, d_obs)
    recon_error: float
    mean_r: np.ndarray | None = None
    components_r: np.ndarray | None = None
    recon_error_r: float | None = None

    def encode(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) @ self.components.T

    def encode_r(self, x_r: np.ndarray) -> np.ndarray:
        if self.components_r is None:
            raise RuntimeError("recovery was fitted in joint mode")
        return (x_r - self.mean_r) @ self.components_r.T


def _pca(data: np.ndarray, k: int):
    mean = data.mean(axis=0)
    centered = data - mean
    _, svals, vt = np.linalg.svd(centered, full_matrices=False)
    if svals[min(k, len(svals)) - 1] < 1e-12 * max(svals[0], 1e-30):
        import warnings
        warnings.warn("rank-deficient data in latent recovery", RuntimeWarning)
    comps = vt[:k]
    recon = centered @ comps.T @ comps
    err = float(((centered - recon) ** 2).mean())
    return mean, comps, err


def fit_latents(xs: np.ndarray, xrs: np.ndarray | None = None,
                mode: str = "joint", k: int = 5) -> LatentRecovery:
    """Truncated-PCA recovery maps; split mode adds a separate agent map."""
    if mode not in ("joint", "split"):
        raise ValueError(f"unknown mode {mode!r}")
    if xs.shape[0] < 10 * k:
        raise ValueError(f"need at least {10 * k} samples, got {xs.shape[0]}")
    mean, comps, err = _pca(xs, k)
    rec = LatentRecovery(mean=mean, components=comps, recon_error=err)
    if mode == "split":
        if xrs is None:
            raise ValueError("split mode needs the agent observations")
        mean_r, comps_r, err_r = _pca(xrs, AGENT_DIM)
        rec.mean_r, rec.components_r, rec.recon_error_r = mean_r, comps_r, err_r
    return rec


def principal_angles(basis_a: np.ndarray, basis_b: np.ndarray) -> np.ndarray:
    """Canonical angles (radians) between the row spaces of two bases."""
    qa = np.linalg.qr(basis_a.T)[0]
    qb = np.linalg.qr(basis_b.T)[0]
    svals = np.linalg.svd(qa.T @ qb, compute_uv=False)
    return np.arccos(np.clip(svals, 0.0, 1.0))


# ---------------------------------------------------------------------------
# reward models
# ---------------------------------------------------------------------------

def _quad_features(u: np.ndarray) -> np.ndarray:
    n, k = u.shape
    iu, ju = np.triu_indices(k)
    cross = u[:, iu] * u[:, ju]
    return np.concatenate([np.ones((n, 1)), u, cross], axis=1)


class RewardModel:
    """Reward predictor on recovered latents; quadratic (closed-form LS) or a
    small MLP trained to a validation plateau."""

    def __init__(self, flavor: str, split_dim: int | None = None):
        if flavor not in ("quadratic", "mlp"):
            raise ValueError(f"unknown flavor {flavor!r}")
        self.flavor = flavor
        self.split_dim = split_dim
        self.weights = None
        self.net = None
        self.block_spectra: dict | None = None
        self.val_mse = None

    # -- quadratic ----------------------------------------------------------

    def _fit_quadratic(self, u: np.ndarray, r: np.ndarray) -> None:
        feats = _quad_features(u)
        self.weights, *_ = np.linalg.lstsq(feats, r, rcond=None)
        k = u.shape[1]
        # reassemble the symmetric quadratic-form matrix to log block spectra
        W = np.zeros((k, k))
        iu, ju = np.triu_indices(k)
        W[iu, ju] = self.weights[1 + k:]
        W = (W + W.T) / 2.0
        if self.split_dim is not None and 0 < self.split_dim < k:
            s = self.split_dim
            self.block_spectra = {
                "base_block": np.linalg.svd(W[:s, :s], compute_uv=False).tolist(),
                "agent_block": np.linalg.svd(W[s:, s:], compute_uv=False).tolist(),
                "coupling_block": np.linalg.svd(W[:s, s:], compute_uv=False).tolist(),
            }
        preds = feats @ self.weights
        self.val_mse = float(((preds - r) ** 2).mean())

    # -- mlp ------------------------------------------------------------------

    def _fit_mlp(self, u: np.ndarray, r: np.ndarray, rng: Rng) -> None:
        from . import numerics as nm
        from .nets import Dense

        n = u.shape[0]
        n_val = max(1, n // 5)
        perm = rng.permutation(n)
        val_idx, tr_idx = perm[:n_val], perm[n_val:]
        u_tr, r_tr = u[tr_idx].astype(np.float32), r[tr_idx].astype(np.float32)
        u_val, r_val = u[val_idx].astype(np.float32), r[val_idx].astype(np.float32)

        h1 = Dense(rng.split("h1"), u.shape[1], 64)
        h2 = Dense(rng.split("h2"), 64, 64)
        out = Dense(rng.split("out"), 64, 1)
        params = [t for layer in (h1, h2, out) for _, t in layer.params("p")]
        opt = nm.Adam(params, learning_rate=1e-3)

        def forward(arr):
            x = nm.Tensor(arr)
            h = nm.relu(h1(x))
            h = nm.relu(h2(h))
            return out(h)

        best = np.inf
        since_best = 0
        batch = 256
        for epoch in range(200):
            order = rng.permutation(len(u_tr))
            for s in range(0, len(order), batch):
                idx = order[s:s + batch]
                opt.zero_grad()
                with nm.Tape() as tape:
                    pred = forward(u_tr[idx])
                    loss = nm.mse_loss(pred, r_tr[idx][:, None])
                    nm.backward(loss, tape)
                opt.step()
            with nm.no_grad():
                val = float(nm.mse_loss(forward(u_val), r_val[:, None]).item())
            if not np.isfinite(val):
                raise RuntimeError(f"reward-model training diverged at epoch {epoch}")
            if val < best - 1e-5:
                best, since_best = val, 0
            else:
                since_best += 1
                if since_best >= 10:  # validation plateau
                    break
        self.net = (h1, h2, out)
        self.val_mse = best

    def fit(self, latents: np.ndarray, rewards: np.ndarray, rng: Rng | None = None) -> "RewardModel":
        if self.flavor == "quadratic":
            self._fit_quadratic(latents, rewards)
        else:
            self._fit_mlp(latents, rewards, rng if rng is not None else Rng(0).split("mlp"))
        return self

    def predict(self, latents: np.ndarray) -> np.ndarray:
        if self.flavor == "quadratic":
            return _quad_features(latents) @ self.weights
        from . import numerics as nm
        h1, h2, out = self.net
        with nm.no_grad():
            x = nm.Tensor(latents.astype(np.float32))
            h = nm.relu(h1(x))
            h = nm.relu(h2(h))
            return out(h).data[:, 0].astype(np.float64)


def fit_reward_model(latents: np.ndarray, rewards: np.ndarray, flavor: str = "quadratic",
                     split_dim: int | None = None, rng: Rng | None = None) -> RewardModel:
    return RewardModel(flavor, split_dim).fit(latents, rewards, rng)


# ---------------------------------------------------------------------------
# planning
# ---------------------------------------------------------------------------

def fit_action_effect(latents: np.ndarray, next_latents: np.ndarray,
                      actions: np.ndarray) -> np.ndarray:
    """Least-squares map D with delta-latent ~= D @ action."""
    deltas = next_latents - latents
    D, *_ = np.linalg.lstsq(actions, deltas, rcond=None)
    return D.T  # (k, 2)


def mpc_plan(reward_model: RewardModel, action_effect: np.ndarray,
             latent: np.ndarray, horizon: int, candidates: int, rng: Rng) -> np.ndarray:
    """Random shooting: uniform action sequences rolled through the linear
    latent dynamics; returns the first action of the best sequence (ties
    break toward the lowest candidate index)."""
    if horizon < 1 or candidates < 1:
        raise ValueError("horizon and candidates must be >= 1")
    seqs = rng.uniform(-1.0, 1.0, (candidates, horizon, 2))
    u = np.tile(latent, (candidates, 1))
    scores = np.zeros(candidates)
    for t in range(horizon):
        u = u + seqs[:, t, :] @ action_effect.T
        scores += reward_model.predict(u)
    best = int(np.argmax(scores))  # argmax returns the first maximizer
    return seqs[best, 0, :]


# ---------------------------------------------------------------------------
# the full comparison
# ---------------------------------------------------------------------------

def collect_dataset(spec: ToyWorldSpec, rng: Rng, episodes: int = 200,
                    steps: int = EPISODE_STEPS):
    """Random-policy rollouts: observations, rewards, actions, transitions."""
    xs, xrs, rewards, actions, next_xs, next_xrs = [], [], [], [], [], []
    for _ in range(episodes):
        state = reset_state(rng)
        x, x_r, _ = sample_observation(spec, state, rng)
        for _ in range(steps):
            a = rng.uniform(-1.0, 1.0, 2)
            nxt = step_state(state, a)
            nx, nx_r, _ = sample_observation(spec, nxt, rng)
            xs.append(x)
            xrs.append(x_r)
            actions.append(a)
            rewards.append(true_reward(state))
            next_xs.append(nx)
            next_xrs.append(nx_r)
            state, x, x_r = nxt, nx, nx_r
    return (np.array(xs), np.array(xrs), np.array(rewards), np.array(actions),
            np.array(next_xs), np.array(next_xrs))


def run_condition(sigma_r: float, sigma_e: float, seed: int,
                  flavor: str = "quadratic", eval_episodes: int = 20,
                  k: int = 6, horizon: int = 10, candidates: int = 256) -> dict:
    """One seed of one noise condition; returns mean final goal distance for
    the joint-latent model and the split-latent model."""
    rng = Rng(seed).split(f"toy-{sigma_r}-{sigma_e}")
    spec = ToyWorldSpec.build(rng.split("world"), sigma_r, sigma_e)
    xs, xrs, rewards, actions, nxs, nxrs = collect_dataset(spec, rng.split("data"))

    results = {}
    rec = fit_latents(xs, xrs, mode="split", k=k)
    for name in ("joint", "split"):
        if name == "joint":
            z = rec.encode(xs)
            z_next = rec.encode(nxs)
        else:
            z = np.concatenate([rec.encode(xs), rec.encode_r(xrs)], axis=1)
            z_next = np.concatenate([rec.encode(nxs), rec.encode_r(nxrs)], axis=1)
        model = fit_reward_model(z, rewards, flavor,
                                 split_dim=k if name == "split" else None,
                                 rng=rng.split(f"model-{name}"))
        effect = fit_action_effect(z, z_next, actions)
        finals = []
        eval_rng = rng.split(f"eval-{name}")
        for _ in range(eval_episodes):
            state = reset_state(eval_rng)
            for _ in range(EPISODE_STEPS):
                x, x_r, _ = sample_observation(spec, state, eval_rng)
                if name == "joint":
                    u = rec.encode(x[None])[0]
                else:
                    u = np.concatenate([rec.encode(x[None])[0], rec.encode_r(x_r[None])[0]])
                a = mpc_plan(model, effect, u, horizon, candidates, eval_rng)
                state = step_state(state, a)
            finals.append(goal_distance(state))
        results[name] = float(np.mean(finals))
        results[f"{name}_val_mse"] = model.val_mse
    return results


def run_table1(seeds: int = 10, flavor: str = "quadratic", out_path=None,
               eval_episodes: int = 20, k: int = 6) -> dict:
    """Mean final goal distance (median over seeds) for the three noise
    conditions and both reward-model inputs; optionally writes the table."""
    if seeds < 5:
        raise ValueError("need at least 5 seeds")
    table = {}
    for cond, (sr, se) in SIGMA_CONDITIONS.items():
        per_seed = [run_condition(sr, se, seed, flavor, eval_episodes, k=k)
                    for seed in range(seeds)]
        table[cond] = {
            "sigma_r": sr,
            "sigma_e": se,
            "joint_median": float(np.median([p["joint"] for p in per_seed])),
            "split_median": float(np.median([p["split"] for p in per_seed])),
            "joint_all": [p["joint"] for p in per_seed],
            "split_all": [p["split"] for p in per_seed],
        }
    if out_path is not None:
        out_path = Path(out_path)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        with open(out_path, "w") as fp:
            json.dump(table, fp, indent=1, sort_keys=True)
        with open(out_path.with_suffix(".txt"), "w") as fp:
            fp.write(format_table(table))
    return table


def format_table(table: dict) -> str:
    lines = [f"{'condition':<12} {'V(z)':>8} {'V(z,z_R)':>9}"]
    for cond, row in table.items():
        lines.append(f"{cond:<12} {row['joint_median']:>8.3f} {row['split_median']:>9.3f}")
    return "\n".join(lines) + "\n"
