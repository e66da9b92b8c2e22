"""Encoder activation-map visualization: per-channel maps of the last conv
layer, normalized, false-colored and blended over the input frame."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from . import numerics as nm
from .agents import Agent, to_u8
from .config import config_from_dicts
from .envs import PointMassEnv
from .images import write_png
from .numerics import Tensor


def _false_color(v: np.ndarray) -> np.ndarray:
    """Map values in [0, 1] to a blue -> cyan -> yellow -> red ramp, (H, W, 3)."""
    v = np.clip(v, 0.0, 1.0)
    r = np.clip(2.0 * v - 0.5, 0, 1)
    g = 1.0 - np.abs(2.0 * v - 1.0) * 0.6
    b = np.clip(1.0 - 2.0 * v, 0, 1)
    return np.stack([r, g, b], axis=-1)


def _nearest_resize(img: np.ndarray, size: int) -> np.ndarray:
    h, w = img.shape
    rows = np.minimum((np.arange(size) * h) // size, h - 1)
    cols = np.minimum((np.arange(size) * w) // size, w - 1)
    return img[np.ix_(rows, cols)]


def normalized_maps(agent: Agent, frames_u8: np.ndarray,
                    masks: np.ndarray | None = None) -> np.ndarray:
    """(32, H, W) activation maps resized to the image, min-max normalized
    per channel; a constant channel maps to all zeros."""
    obs = agent._obs_tensor(frames_u8[None], None if masks is None else masks[None])
    with nm.no_grad():
        maps = agent.encoder.conv_maps(obs).data[0]
    size = agent.env_config.image_size
    out = np.zeros((maps.shape[0], size, size), np.float32)
    for c in range(maps.shape[0]):
        m = maps[c]
        lo, hi = float(m.min()), float(m.max())
        if hi > lo:
            out[c] = _nearest_resize((m - lo) / (hi - lo), size)
    return out


def dump_activations(checkpoint_path, out_dir, episode_steps: int = 5,
                     seed: int | None = None) -> list[Path]:
    """Write one blended image per encoder channel plus a contact sheet.

    The observation comes from a freshly seeded episode advanced a few
    steps with the deterministic policy.
    """
    arrays, extra = nm.load_checkpoint(checkpoint_path)
    agent_cfg, env_cfg = config_from_dicts(extra["agent_config"], extra["env_config"])
    if seed is not None:
        env_cfg.seed = seed
    agent = Agent(agent_cfg, env_cfg)
    agent.load(checkpoint_path)

    env = PointMassEnv(env_cfg)
    obs = env.reset()
    for _ in range(episode_steps):
        frames = to_u8(obs.frames)
        masks = obs.masks if agent_cfg.variant == "drq-rgbm" else None
        obs = env.step(agent.act(frames, masks, eval_mode=True))
    frames_u8 = to_u8(obs.frames)
    masks = obs.masks if agent_cfg.variant == "drq-rgbm" else None
    maps = normalized_maps(agent, frames_u8, masks)

    base_rgb = (frames_u8[-3:].astype(np.float32) / 255.0).transpose(1, 2, 0)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    blended_all = []
    for c in range(maps.shape[0]):
        blended = 0.5 * base_rgb + 0.5 * _false_color(maps[c])
        blended_all.append(blended)
        paths.append(write_png(out_dir / f"channel_{c:02d}.png", blended))

    size = agent.env_config.image_size
    cols, rows = 8, (len(blended_all) + 7) // 8
    sheet = np.ones((rows * (size + 2) + 2, cols * (size + 2) + 2, 3), np.float32)
    for c, img in enumerate(blended_all):
        r, col = divmod(c, cols)
        y, x = 2 + r * (size + 2), 2 + col * (size + 2)
        sheet[y:y + size, x:x + size] = img
    paths.append(write_png(out_dir / "contact_sheet.png", sheet))
    return paths
