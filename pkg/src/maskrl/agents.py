"""Actor-critic learner from pixels with auxiliary mask/reconstruction
decoders on a split latent, plus its baseline variants.

Variants (selected by ``AgentConfig.variant``):
    sear          split latent; mask decoder on the first half (BCE), image
                  decoder on the second half (MSE), joint loss with the critic
    sear-nosplit  both decoders consume the full latent (no positional split)
    drq           no decoders (augmented actor-critic base)
    drq-ae        single image decoder on the full latent
    drq-rgbm      masks appended to the observation channels; no decoders

One update: sample an n-step batch, apply one random shift per sample
(identical for image and mask), do a single joint backward pass for
critic + weighted decoder losses, step Adam on encoder/critic/decoders,
then update the actor from the detached latent and soft-update the target
critic. Actor gradients never reach the encoder.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import masktools, nets
from . import numerics as nm
from .envs import EnvConfig, PointMassEnv
from .numerics import Rng, Tensor
from .replay import Batch, ReplayBuffer, ReplayNotReady, Transition

VARIANTS = ("sear", "drq", "drq-ae", "drq-rgbm", "sear-nosplit")


@dataclass
class LossWeights:
    c1: float = 0.01      # image reconstruction coefficient
    c2: float = 0.0025    # mask prediction coefficient
    kl: float = 0.0       # posterior regularizer (0 disables; experimental)

    def validate(self) -> "LossWeights":
        if self.c1 < 0 or self.c2 < 0 or self.kl < 0:
            raise ValueError("loss coefficients must be non-negative")
        return self


@dataclass
class AgentConfig:
    variant: str = "sear"
    seed: int = 0
    discount: float = 0.99
    n_step: int = 3
    batch_size: int = 256
    tau: float = 0.01
    update_every: int = 2            # policy steps between updates
    seed_frames: int = 4000          # frames collected before learning
    exploration_steps: int = 2000    # policy steps with uniform random actions
    std_start: float = 1.0
    std_end: float = 0.1
    std_duration: int = 500_000      # frames
    std_clip: float = 0.3
    shift_pad: int = 4
    lr: float = 1e-4
    latent_dim: int = 4096
    feature_dim: int = 50
    hidden_dim: int = 1024
    replay_capacity: int = 250_000
    eval_every: int = 10_000         # frames
    eval_episodes: int = 10
    decoder_first_channels: int = 16
    loss_weights: LossWeights = field(default_factory=LossWeights)
    mask_source: str = "clean"       # clean | noisy | approximate | joint-patches
    mask_noise_p: float = 0.3
    joint_patch_radius: int = 5
    stop_at_success: float | None = None

    def validate(self) -> "AgentConfig":
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if not 0.0 < self.discount < 1.0:
            raise ValueError(f"discount {self.discount} outside (0, 1)")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError(f"tau {self.tau} outside (0, 1]")
        if self.mask_source not in ("clean", "noisy", "approximate", "joint-patches"):
            raise ValueError(f"unknown mask_source {self.mask_source!r}")
        self.loss_weights.validate()
        return self


def linear_schedule(start: float, end: float, duration: int, t: int) -> float:
    frac = min(max(t, 0) / max(duration, 1), 1.0)
    return start + (end - start) * frac


# ---------------------------------------------------------------------------
# shared random-shift augmentation
# ---------------------------------------------------------------------------

def _apply_shift(padded: np.ndarray, offsets: np.ndarray, size: int,
                 recorder: list | None, tag: str) -> np.ndarray:
    out = np.empty((padded.shape[0], padded.shape[1], size, size), padded.dtype)
    for b in range(padded.shape[0]):
        dy, dx = int(offsets[b, 0]), int(offsets[b, 1])
        out[b] = padded[b, :, dy:dy + size, dx:dx + size]
        if recorder is not None:
            recorder.append((tag, b, dy, dx))
    return out


def random_shift(images: np.ndarray, masks: np.ndarray | None, pad: int,
                 rng: Rng, recorder: list | None = None):
    """Replicate-pad then crop at one random integer offset per sample.

    The offset drawn for a sample is applied to its image stack and its mask
    stack alike, so the supervision stays pixel-aligned with the pixels.
    """
    if pad < 0:
        raise ValueError("pad must be >= 0")
    if pad == 0:
        return images, masks
    B, _, H, W = images.shape
    offsets = rng.integers(0, 2 * pad + 1, size=(B, 2))
    pimg = np.pad(images, ((0, 0), (0, 0), (pad, pad), (pad, pad)), mode="edge")
    aug_img = _apply_shift(pimg, offsets, H, recorder, "image")
    aug_mask = None
    if masks is not None:
        pmask = np.pad(masks, ((0, 0), (0, 0), (pad, pad), (pad, pad)), mode="edge")
        aug_mask = (_apply_shift(pmask, offsets, H, recorder, "mask") > 0).astype(masks.dtype)
    return aug_img, aug_mask


# ---------------------------------------------------------------------------
# the agent
# ---------------------------------------------------------------------------

class Agent:
    def __init__(self, config: AgentConfig, env_config: EnvConfig, dtype=np.float32):
        self.config = config.validate()
        self.env_config = env_config
        root = Rng(config.seed)
        s = env_config.frame_stack
        in_channels = 3 * s + (s if config.variant == "drq-rgbm" else 0)
        self.in_channels = in_channels
        action_dim = 2

        self.encoder = nets.Encoder(root.split("encoder-init"), in_channels,
                                    config.latent_dim, env_config.image_size,
                                    gaussian=config.loss_weights.kl > 0, dtype=dtype)
        self.actor = nets.Actor(root.split("actor-init"), config.latent_dim, action_dim,
                                config.feature_dim, config.hidden_dim, dtype)
        self.critic = nets.TwinCritic(root.split("critic-init"), config.latent_dim,
                                      action_dim, config.feature_dim, config.hidden_dim, dtype)
        self.target_critic = nets.TwinCritic(root.split("critic-init"), config.latent_dim,
                                             action_dim, config.feature_dim,
                                             config.hidden_dim, dtype)
        self.target_critic.copy_params_from(self.critic)

        half = config.latent_dim // 2
        v = config.variant
        self.mask_decoder = None
        self.recon_decoder = None
        if v in ("sear", "sear-nosplit"):
            mask_in = half if v == "sear" else config.latent_dim
            self.mask_decoder = nets.make_mask_decoder(
                root.split("mask-decoder-init"), mask_in, s, env_config.image_size,
                config.decoder_first_channels, dtype)
        if v in ("sear", "sear-nosplit", "drq-ae"):
            recon_in = half if v == "sear" else config.latent_dim
            self.recon_decoder = nets.make_recon_decoder(
                root.split("recon-decoder-init"), recon_in, s, env_config.image_size,
                config.decoder_first_channels, dtype)

        lr = config.lr
        self.encoder_opt = nm.Adam(self.encoder.parameters(), lr)
        self.actor_opt = nm.Adam(self.actor.parameters(), lr)
        self.critic_opt = nm.Adam(self.critic.parameters(), lr)
        self.mask_opt = nm.Adam(self.mask_decoder.parameters(), lr) if self.mask_decoder else None
        self.recon_opt = nm.Adam(self.recon_decoder.parameters(), lr) if self.recon_decoder else None

        self.aug_rng = root.split("augmentation")
        self.noise_rng = root.split("action-noise")
        self.kl_rng = root.split("kl-noise")
        self.explore_rng = root.split("exploration")
        self.shift_recorder: list | None = None
        self.update_count = 0
        self.frames_seen = 0

    # -- acting --------------------------------------------------------------

    def std_now(self) -> float:
        c = self.config
        return linear_schedule(c.std_start, c.std_end, c.std_duration, self.frames_seen)

    def _obs_tensor(self, frames_u8: np.ndarray, masks: np.ndarray | None) -> Tensor:
        x = frames_u8.astype(np.float32) / 255.0
        if self.config.variant == "drq-rgbm":
            x = np.concatenate([x, masks.astype(np.float32)], axis=-3)
        return Tensor(x)

    def act(self, frames_u8: np.ndarray, masks: np.ndarray | None = None,
            eval_mode: bool = False) -> np.ndarray:
        obs = self._obs_tensor(frames_u8[None], None if masks is None else masks[None])
        with nm.no_grad():
            latent = self._encode_mean(obs)
            if eval_mode:
                return self.actor.act(latent, 0.0, self.config.std_clip, True, self.noise_rng)[0]
            return self.actor.act(latent, self.std_now(), self.config.std_clip,
                                  False, self.noise_rng)[0]

    def random_action(self) -> np.ndarray:
        return self.explore_rng.uniform(-1.0, 1.0, 2)

    def _encode_mean(self, obs: Tensor) -> Tensor:
        if self.encoder.gaussian:
            mu, _ = self.encoder.forward_gaussian(obs)
            return mu
        return self.encoder.forward(obs)

    # -- updates ---------------------------------------------------------------

    def update(self, replay: ReplayBuffer) -> dict:
        batch = replay.sample_batch(self.config.batch_size, self.config.n_step,
                                    self.env_config.frame_stack, self.config.discount)
        report = self.update_critic_and_decoders(batch)
        report.update(self.update_actor())
        nets.soft_update(self.target_critic, self.critic, self.config.tau)
        self.update_count += 1
        return report

    def critic_target(self, next_obs_u8: np.ndarray, next_masks: np.ndarray | None,
                      n_step_return: np.ndarray, discount: np.ndarray) -> np.ndarray:
        """y = return + gamma^n * min(Q'1, Q'2) at the noisy target action."""
        next_t = self._obs_tensor_batch(next_obs_u8, next_masks)
        with nm.no_grad():
            z_next = self._encode_mean(next_t)
            a_next = self.actor.action_tensor(z_next, self.std_now(),
                                              self.config.std_clip, self.noise_rng)
            q1t, q2t = self.target_critic.forward(z_next, a_next)
            target_q = np.minimum(q1t.data, q2t.data)
        return n_step_return[:, None] + discount[:, None] * target_q

    def update_critic_and_decoders(self, batch: Batch) -> dict:
        cfg = self.config
        lw = cfg.loss_weights
        need_masks = ((self.mask_decoder is not None and lw.c2 > 0)
                      or cfg.variant == "drq-rgbm")
        aug_obs, aug_masks = random_shift(
            batch.obs, batch.masks if need_masks else None, cfg.shift_pad,
            self.aug_rng, self.shift_recorder)
        aug_next, aug_next_masks = random_shift(
            batch.next_obs, batch.next_masks if cfg.variant == "drq-rgbm" else None,
            cfg.shift_pad, self.aug_rng, self.shift_recorder)

        obs_t = self._obs_tensor_batch(aug_obs, aug_masks)
        y = self.critic_target(aug_next, aug_next_masks,
                               batch.n_step_return, batch.discount)

        kl_loss_val = 0.0
        with nm.Tape() as tape:
            if self.encoder.gaussian:
                mu, logvar = self.encoder.forward_gaussian(obs_t)
                eps = Tensor(self.kl_rng.normal(0, 1, mu.data.shape).astype(mu.data.dtype))
                z = nm.add(mu, nm.mul(eps, nm.exp(nm.scale(logvar, 0.5))))
            else:
                z = self.encoder.forward(obs_t)
            q1, q2 = self.critic.forward(z, Tensor(batch.action))
            critic_loss = nm.add(nm.mse_loss(q1, y.astype(q1.data.dtype)),
                                 nm.mse_loss(q2, y.astype(q2.data.dtype)))
            total = critic_loss
            mask_loss = recon_loss = None
            pair = nets.split_latent(z) if cfg.variant == "sear" else None
            if self.mask_decoder is not None and lw.c2 > 0:
                z_m = pair.z_r if cfg.variant == "sear" else z
                pred = self.mask_decoder.forward(z_m)
                mask_loss = nm.bce_loss(pred, aug_masks.astype(pred.data.dtype))
                total = nm.add(total, nm.scale(mask_loss, lw.c2))
            if self.recon_decoder is not None and lw.c1 > 0:
                z_r = pair.z_e if cfg.variant == "sear" else z
                recon = self.recon_decoder.forward(z_r)
                target_img = aug_obs.astype(recon.data.dtype) / 255.0
                recon_loss = nm.mse_loss(recon, target_img)
                total = nm.add(total, nm.scale(recon_loss, lw.c1))
            if self.encoder.gaussian and lw.kl > 0:
                t1 = nm.affine(logvar, 1.0, 1.0)
                t1 = nm.sub(t1, nm.mul(mu, mu))
                t1 = nm.sub(t1, nm.exp(logvar))
                kl = nm.scale(nm.sum_all(t1), -0.5 / mu.data.shape[0])
                kl_loss_val = kl.item()
                total = nm.add(total, nm.scale(kl, lw.kl))
            total_val = total.item()
            if not np.isfinite(total_val):
                raise nm.NumericError(
                    f"non-finite total loss at update {self.update_count}: "
                    f"critic={critic_loss.item()}")
            nm.backward(total, tape)

        self.encoder_opt.step()
        self.critic_opt.step()
        if mask_loss is not None:
            self.mask_opt.step()
        if recon_loss is not None:
            self.recon_opt.step()
        for opt in (self.encoder_opt, self.critic_opt, self.mask_opt, self.recon_opt,
                    self.actor_opt):
            if opt is not None:
                opt.zero_grad()

        c_val = critic_loss.item()
        m_val = mask_loss.item() if mask_loss is not None else 0.0
        r_val = recon_loss.item() if recon_loss is not None else 0.0
        report = {
            "critic_loss": c_val,
            "recon_loss": r_val,
            "mask_loss": m_val,
            "kl_loss": kl_loss_val,
            # reported total is the float64 recombination of the reported
            # components, so the weighted-sum identity holds exactly
            "total_loss": c_val + lw.c1 * r_val + lw.c2 * m_val + lw.kl * kl_loss_val,
            "q_mean": float(q1.data.mean()),
        }
        self._last_latent = z.detach()
        return report

    def update_actor(self, latent: Tensor | None = None) -> dict:
        cfg = self.config
        z_d = (self._last_latent if latent is None else latent.detach())
        with nm.Tape() as tape:
            a = self.actor.action_tensor(z_d, self.std_now(), cfg.std_clip, self.noise_rng)
            q1, q2 = self.critic.forward(z_d, a)
            actor_loss = nm.scale(nm.mean_all(nm.minimum(q1, q2)), -1.0)
            nm.backward(actor_loss, tape)
        assert all(p.grad is None for p in self.encoder.parameters()), \
            "actor loss leaked gradients into the encoder"
        self.actor_opt.step()
        # the critic participated in the graph; drop its gradients unstepped
        self.critic_opt.zero_grad()
        self.actor_opt.zero_grad()
        return {"actor_loss": actor_loss.item()}

    def _obs_tensor_batch(self, frames_u8: np.ndarray, masks: np.ndarray | None) -> Tensor:
        x = frames_u8.astype(np.float32) / 255.0
        if self.config.variant == "drq-rgbm":
            x = np.concatenate([x, masks.astype(np.float32)], axis=1)
        return Tensor(x)

    # -- checkpointing ---------------------------------------------------------

    def param_arrays(self) -> dict:
        arrays = {}
        arrays.update(self.encoder.param_arrays("encoder"))
        arrays.update(self.actor.param_arrays("actor"))
        arrays.update(self.critic.param_arrays("critic"))
        arrays.update(self.target_critic.param_arrays("target_critic"))
        if self.mask_decoder is not None:
            arrays.update(self.mask_decoder.param_arrays("mask_decoder"))
        if self.recon_decoder is not None:
            arrays.update(self.recon_decoder.param_arrays("recon_decoder"))
        return arrays

    def save(self, path) -> None:
        extra = {"agent_config": _config_dict(self.config),
                 "env_config": asdict(self.env_config),
                 "frames_seen": self.frames_seen,
                 "update_count": self.update_count}
        nm.save_checkpoint(path, self.param_arrays(), extra)

    def load(self, path) -> None:
        arrays, extra = nm.load_checkpoint(path)
        self.encoder.load_param_arrays("encoder", arrays)
        self.actor.load_param_arrays("actor", arrays)
        self.critic.load_param_arrays("critic", arrays)
        self.target_critic.load_param_arrays("target_critic", arrays)
        if self.mask_decoder is not None:
            self.mask_decoder.load_param_arrays("mask_decoder", arrays)
        if self.recon_decoder is not None:
            self.recon_decoder.load_param_arrays("recon_decoder", arrays)
        self.frames_seen = int(extra.get("frames_seen", 0))
        self.update_count = int(extra.get("update_count", 0))


def _config_dict(config: AgentConfig) -> dict:
    d = asdict(config)
    return d


# ---------------------------------------------------------------------------
# mask corruption at collection time
# ---------------------------------------------------------------------------

class MaskSource:
    """Applies the configured corruption to each freshly rendered mask."""

    def __init__(self, config: AgentConfig, rng: Rng):
        self.kind = config.mask_source
        self.noise_p = config.mask_noise_p
        self.radius = config.joint_patch_radius
        self.pipeline = masktools.MaskPipelineConfig().validate()
        self.rng = rng

    def __call__(self, mask: np.ndarray, env: PointMassEnv) -> np.ndarray:
        if self.kind == "clean":
            return mask
        if self.kind == "noisy":
            return masktools.add_noise(mask, self.noise_p, self.rng)
        if self.kind == "approximate":
            return masktools.approximate(mask, self.pipeline)
        return masktools.joint_patches(env.joint_pixels(), self.radius, mask.shape)


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

def to_u8(frames: np.ndarray) -> np.ndarray:
    return np.round(frames * 255.0).astype(np.uint8)


class MetricsWriter:
    """Append-only JSON-lines metrics; one flushed line per record."""

    def __init__(self, path, timestamps: bool = False):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fp = open(self.path, "a")
        self.timestamps = timestamps
        self._t0 = time.monotonic()

    def write(self, record: dict) -> None:
        rec = dict(record)
        if self.timestamps:
            rec["wall_time"] = round(time.monotonic() - self._t0, 3)
        self._fp.write(json.dumps(rec, sort_keys=True) + "\n")
        self._fp.flush()

    def close(self) -> None:
        self._fp.close()


def evaluate(agent: Agent, env_config: EnvConfig, episodes: int, eval_seed: int) -> dict:
    """Deterministic-policy evaluation on freshly seeded episodes."""
    cfg = EnvConfig(**{**asdict(env_config), "seed": eval_seed})
    env = PointMassEnv(cfg)
    mask_source = MaskSource(agent.config, Rng(eval_seed).split("eval-mask"))
    successes = 0
    returns = []
    for _ in range(episodes):
        obs = env.reset()
        done = False
        ep_return = 0.0
        reached = env.is_success()
        while not done:
            frames = to_u8(obs.frames)
            masks = obs.masks if agent.config.variant == "drq-rgbm" else None
            if masks is not None:
                masks = np.stack([mask_source(m, env) for m in masks])
            action = agent.act(frames, masks, eval_mode=True)
            obs = env.step(action)
            ep_return += obs.reward
            reached = reached or env.is_success()
            done = obs.done
        successes += int(reached)
        returns.append(ep_return)
    return {"eval_success": successes / episodes,
            "eval_return": float(np.mean(returns))}


def train(env: PointMassEnv, agent_config: AgentConfig, out_dir,
          total_frames: int, timestamps: bool = False,
          checkpoint_every: int | None = None) -> dict:
    """Collect-and-update loop; writes metrics.jsonl, run.json and checkpoints.

    Returns a summary with the final evaluation results and file paths.
    """
    nm.kernels.limit_blas_threads(1)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = agent_config.validate()
    env_cfg = env.config
    agent = Agent(cfg, env_cfg)
    root = Rng(cfg.seed)
    replay = ReplayBuffer(cfg.replay_capacity, (3, env_cfg.image_size, env_cfg.image_size),
                          root.split("replay"))
    mask_source = MaskSource(cfg, root.split("mask-corruption"))

    manifest = {
        "agent_config": _config_dict(cfg),
        "env_config": asdict(env_cfg),
        "total_frames": total_frames,
        "version": "maskrl-0.1.0",
    }
    with open(out_dir / "run.json", "w") as fp:
        json.dump(manifest, fp, indent=1, sort_keys=True)
    metrics = MetricsWriter(out_dir / "metrics.jsonl", timestamps)

    obs = env.reset()
    episode_id = 0
    step_index = 0
    episode_return = 0.0
    episode_reached = env.is_success()
    pending_frame = to_u8(obs.frames[-3:])
    pending_mask = mask_source(obs.masks[-1], env)
    policy_steps = 0
    eval_round = 0
    next_eval = cfg.eval_every
    last_eval: dict = {}
    stop = False

    try:
        while agent.frames_seen < total_frames and not stop:
            if policy_steps < cfg.exploration_steps:
                action = agent.random_action()
            else:
                frames = to_u8(obs.frames)
                masks = obs.masks if cfg.variant == "drq-rgbm" else None
                if masks is not None:
                    masks = np.stack([mask_source(m, env) for m in masks])
                action = agent.act(frames, masks, eval_mode=False)
            nxt = env.step(action)
            replay.push(Transition(pending_frame, pending_mask,
                                   np.asarray(action, np.float32), nxt.reward,
                                   terminal=False, episode_id=episode_id,
                                   step_index=step_index))
            pending_frame = to_u8(nxt.frames[-3:])
            pending_mask = mask_source(nxt.masks[-1], env)
            episode_return += nxt.reward
            episode_reached = episode_reached or env.is_success()
            agent.frames_seen += env_cfg.action_repeat
            policy_steps += 1
            step_index += 1
            obs = nxt

            if nxt.done:
                replay.push(Transition(pending_frame, pending_mask, None, 0.0,
                                       terminal=False, episode_id=episode_id,
                                       step_index=step_index))
                metrics.write({"step": agent.frames_seen, "type": "episode",
                               "episode": episode_id,
                               "episode_return": round(episode_return, 6),
                               "episode_success": int(episode_reached)})
                episode_id += 1
                step_index = 0
                episode_return = 0.0
                obs = env.reset()
                episode_reached = env.is_success()
                pending_frame = to_u8(obs.frames[-3:])
                pending_mask = mask_source(obs.masks[-1], env)

            if (agent.frames_seen > cfg.seed_frames
                    and policy_steps % cfg.update_every == 0):
                try:
                    report = agent.update(replay)
                except ReplayNotReady:
                    report = None
                if report is not None:
                    rec = {"step": agent.frames_seen, "type": "update"}
                    rec.update({k: round(float(v), 8) for k, v in report.items()})
                    metrics.write(rec)

            if agent.frames_seen >= next_eval:
                last_eval = evaluate(agent, env_cfg, cfg.eval_episodes,
                                     eval_seed=cfg.seed * 10_000 + 777 + eval_round)
                eval_round += 1
                next_eval += cfg.eval_every
                metrics.write({"step": agent.frames_seen, "type": "eval",
                               **{k: round(float(v), 6) for k, v in last_eval.items()}})
                if (cfg.stop_at_success is not None
                        and last_eval["eval_success"] >= cfg.stop_at_success):
                    stop = True
            if checkpoint_every and agent.frames_seen % checkpoint_every == 0:
                agent.save(out_dir / f"checkpoint_{agent.frames_seen:08d}")
    finally:
        metrics.close()
    agent.save(out_dir / "checkpoint_final")
    summary = {"frames": agent.frames_seen, "updates": agent.update_count,
               "episodes": episode_id, "final_eval": last_eval,
               "metrics_path": str(out_dir / "metrics.jsonl"),
               "checkpoint_path": str(out_dir / "checkpoint_final"),
               "stopped_early": stop}
    with open(out_dir / "summary.json", "w") as fp:
        json.dump(summary, fp, indent=1, sort_keys=True)
    return summary
