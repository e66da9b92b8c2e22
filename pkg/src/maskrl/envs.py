"""Analytic 2D point-mass control environments rendered to RGB with exact
agent masks.

The agent is drawn as a small articulated two-link arm (base disc, two
rotated rectangles, end-effector disc) so mask prediction is a nontrivial
task. All geometry lives in the unit box; a pixel belongs to a shape iff
its center does, which gives a closed-form mask definition that a second
rasterizer can verify independently.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .numerics import Rng

DAMPING = 0.8
GAIN = 0.1
ATTRACT_ALPHA = 5.0
REPULSE_BETA = 0.5
MIN_SEPARATION = 0.15
REACH_SUCCESS_RADIUS = 0.05
PUSH_SUCCESS_RADIUS = 0.07
OBJECT_RADIUS = 0.045

TASKS = ("reach", "reach-obstacle", "push")
DISTRACTORS = ("none", "static-image", "per-episode-random")


class ConfigError(ValueError):
    pass


@dataclass
class EnvConfig:
    image_size: int = 64
    frame_stack: int = 3
    action_repeat: int = 2
    episode_length: int = 100  # frames; must be a multiple of action_repeat
    task: str = "reach"
    distractor: str = "none"
    seed: int = 0
    sparse_reward: bool = False

    def validate(self) -> "EnvConfig":
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}")
        if self.distractor not in DISTRACTORS:
            raise ConfigError(f"unknown distractor {self.distractor!r}")
        if self.action_repeat < 1:
            raise ConfigError("action_repeat must be >= 1")
        if self.episode_length % self.action_repeat:
            raise ConfigError("episode_length must be a multiple of action_repeat")
        if self.frame_stack < 1:
            raise ConfigError("frame_stack must be >= 1")
        return self


@dataclass
class WorldState:
    agent_pos: np.ndarray
    agent_vel: np.ndarray
    goal_pos: np.ndarray
    obstacle_pos: np.ndarray
    obstacle_radius: float
    object_pos: np.ndarray | None
    time_step: int = 0


@dataclass
class Observation:
    frames: np.ndarray          # (3*S, H, W) float32 in [0, 1]
    masks: np.ndarray           # (S, H, W) uint8 in {0, 1}
    proprio: np.ndarray         # agent_pos ++ agent_vel
    reward: float
    done: bool


# --- sprite geometry (unit-box units) --------------------------------------

BASE_RADIUS = 0.030
LINK1_LEN = 0.085
LINK1_WIDTH = 0.030
LINK2_LEN = 0.070
LINK2_WIDTH = 0.024
EE_RADIUS = 0.022
GOAL_RADIUS = 0.040

AGENT_COLORS = {
    "base": (0.85, 0.15, 0.10),
    "link1": (0.80, 0.25, 0.10),
    "link2": (0.90, 0.45, 0.10),
    "ee": (0.95, 0.75, 0.15),
}
GOAL_COLOR = (0.10, 0.80, 0.15)
OBSTACLE_COLOR = (0.50, 0.50, 0.55)
OBJECT_COLOR = (0.20, 0.30, 0.90)
BACKGROUND_COLOR = (0.05, 0.05, 0.08)


def arm_joints(state: WorldState) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Base, elbow and wrist positions of the arm sprite.

    The shoulder tracks the motion direction (a fixed angle at rest) and
    the elbow flexes slowly with time, so masks vary within an episode.
    """
    speed = float(np.hypot(state.agent_vel[0], state.agent_vel[1]))
    theta1 = math.atan2(state.agent_vel[1], state.agent_vel[0]) if speed > 1e-4 else 0.9
    bend = 0.5 + 0.4 * math.sin(2.0 * math.pi * state.time_step / 25.0)
    base = np.asarray(state.agent_pos, np.float64)
    elbow = base + LINK1_LEN * np.array([math.cos(theta1), math.sin(theta1)])
    theta2 = theta1 + bend
    wrist = elbow + LINK2_LEN * np.array([math.cos(theta2), math.sin(theta2)])
    return base, elbow, wrist


def agent_shapes(state: WorldState) -> list[tuple]:
    """Geometric primitives covered by the agent: ("disc", c, r) and
    ("rect", p0, p1, width) entries, in draw order."""
    base, elbow, wrist = arm_joints(state)
    return [
        ("disc", base, BASE_RADIUS),
        ("rect", base, elbow, LINK1_WIDTH),
        ("rect", elbow, wrist, LINK2_WIDTH),
        ("disc", wrist, EE_RADIUS),
    ]


def _pixel_grid(size: int):
    centers = (np.arange(size) + 0.5) / size
    return np.meshgrid(centers, centers, indexing="xy")  # X varies along cols


def _disc_cover(X, Y, center, radius):
    return (X - center[0]) ** 2 + (Y - center[1]) ** 2 <= radius * radius


def _rect_cover(X, Y, p0, p1, width):
    dx, dy = p1[0] - p0[0], p1[1] - p0[1]
    length = math.hypot(dx, dy)
    if length < 1e-12:
        return _disc_cover(X, Y, p0, width / 2)
    ux, uy = dx / length, dy / length
    cx, cy = (p0[0] + p1[0]) / 2, (p0[1] + p1[1]) / 2
    rx, ry = X - cx, Y - cy
    along = rx * ux + ry * uy
    across = -rx * uy + ry * ux
    return (np.abs(along) <= length / 2) & (np.abs(across) <= width / 2)


def _shape_cover(X, Y, shape):
    kind = shape[0]
    if kind == "disc":
        return _disc_cover(X, Y, shape[1], shape[2])
    return _rect_cover(X, Y, shape[1], shape[2], shape[3])


def render(state: WorldState, config: EnvConfig,
           background: np.ndarray | None = None,
           include_agent: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Rasterize one state: returns (rgb (3,H,W) float32, mask (H,W) uint8).

    The mask marks exactly the pixels covered by the agent sprite; changing
    the background can never change it.
    """
    size = config.image_size
    X, Y = _pixel_grid(size)
    rgb = np.empty((3, size, size), np.float32)
    if background is not None:
        rgb[:] = background
    else:
        for c in range(3):
            rgb[c] = BACKGROUND_COLOR[c]

    def paint(cover, color):
        for c in range(3):
            rgb[c][cover] = color[c]

    paint(_disc_cover(X, Y, state.goal_pos, GOAL_RADIUS), GOAL_COLOR)
    if config.task == "reach-obstacle":
        paint(_disc_cover(X, Y, state.obstacle_pos, state.obstacle_radius), OBSTACLE_COLOR)
    if config.task == "push" and state.object_pos is not None:
        half = OBJECT_RADIUS
        sq = (np.abs(X - state.object_pos[0]) <= half) & (np.abs(Y - state.object_pos[1]) <= half)
        paint(sq, OBJECT_COLOR)

    mask = np.zeros((size, size), np.uint8)
    if include_agent:
        for name, shape in zip(AGENT_COLORS, agent_shapes(state)):
            cover = _shape_cover(X, Y, shape)
            paint(cover, AGENT_COLORS[name])
            mask |= cover.astype(np.uint8)
    return rgb, mask


def reward_for(state: WorldState, task: str) -> float:
    """Dense shaped reward; bounded to (-REPULSE_BETA, 1] for every task."""
    pos = state.agent_pos
    if task == "push":
        d_reach = float(np.linalg.norm(pos - state.object_pos))
        d_goal = float(np.linalg.norm(state.object_pos - state.goal_pos))
        return 0.5 * math.exp(-ATTRACT_ALPHA * d_reach) + 0.5 * math.exp(-ATTRACT_ALPHA * d_goal)
    r = math.exp(-ATTRACT_ALPHA * float(np.linalg.norm(pos - state.goal_pos)))
    if task == "reach-obstacle":
        d_obs = float(np.linalg.norm(pos - state.obstacle_pos))
        r -= REPULSE_BETA * math.exp(-d_obs / state.obstacle_radius)
    return r


def success(state: WorldState, task: str = "reach") -> bool:
    if task == "push":
        return float(np.linalg.norm(state.object_pos - state.goal_pos)) < PUSH_SUCCESS_RADIUS
    return float(np.linalg.norm(state.agent_pos - state.goal_pos)) < REACH_SUCCESS_RADIUS


def _sample_positions(rng: Rng, count: int, max_tries: int = 1000) -> list[np.ndarray]:
    """Uniform positions with pairwise separation of at least MIN_SEPARATION."""
    for _ in range(max_tries):
        pts = [rng.uniform(0.1, 0.9, 2) for _ in range(count)]
        ok = all(np.linalg.norm(pts[i] - pts[j]) >= MIN_SEPARATION
                 for i in range(count) for j in range(i + 1, count))
        if ok:
            return pts
    raise ConfigError(f"could not place {count} entities after {max_tries} tries")


def _bilinear_upsample(small: np.ndarray, size: int) -> np.ndarray:
    """(h, w, 3) -> (size, size, 3) bilinear interpolation."""
    h, w, _ = small.shape
    ys = np.clip((np.arange(size) + 0.5) * h / size - 0.5, 0, h - 1)
    xs = np.clip((np.arange(size) + 0.5) * w / size - 0.5, 0, w - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None, None]
    fx = (xs - x0)[None, :, None]
    top = small[y0][:, x0] * (1 - fx) + small[y0][:, x1] * fx
    bot = small[y1][:, x0] * (1 - fx) + small[y1][:, x1] * fx
    return top * (1 - fy) + bot * fy


def _make_background(rng: Rng, size: int) -> np.ndarray:
    """Smooth random color blobs, (3, H, W) in [0, 0.75]."""
    small = rng.uniform(0.0, 0.75, (6, 6, 3))
    return _bilinear_upsample(small, size).transpose(2, 0, 1).astype(np.float32)


class PointMassEnv:
    """Velocity-damped point mass with frame stacking and action repeat.

    One ``step`` applies the action ``action_repeat`` times (rewards
    summed), renders a single new frame and returns the stacked
    observation. Deterministic for a fixed seed and action sequence.
    """

    def __init__(self, config: EnvConfig, rng: Rng | None = None):
        self.config = config.validate()
        self.rng = rng if rng is not None else Rng(config.seed).split("env")
        self._static_bg = (_make_background(self.rng.split("static-bg"), config.image_size)
                           if config.distractor == "static-image" else None)
        self._bg = None
        self._frames: deque = deque(maxlen=config.frame_stack)
        self._masks: deque = deque(maxlen=config.frame_stack)
        self.state: WorldState | None = None

    # -- episode control ---------------------------------------------------

    def reset(self) -> Observation:
        cfg = self.config
        n = {"reach": 2, "reach-obstacle": 3, "push": 3}[cfg.task]
        pts = _sample_positions(self.rng, n)
        agent, goal = pts[0], pts[1]
        obstacle = pts[2] if cfg.task == "reach-obstacle" else np.array([0.5, 0.5])
        obj = pts[2].copy() if cfg.task == "push" else None
        radius = float(self.rng.uniform(0.06, 0.12))
        self.state = WorldState(
            agent_pos=agent.astype(np.float64),
            agent_vel=np.zeros(2),
            goal_pos=goal.astype(np.float64),
            obstacle_pos=obstacle.astype(np.float64),
            obstacle_radius=radius,
            object_pos=obj,
            time_step=0,
        )
        if cfg.distractor == "per-episode-random":
            self._bg = _make_background(self.rng.split(f"bg-{self.rng.integers(0, 2**32)}"),
                                        cfg.image_size)
        elif cfg.distractor == "static-image":
            self._bg = self._static_bg
        else:
            self._bg = None
        rgb, mask = render(self.state, cfg, self._bg)
        self._frames.clear()
        self._masks.clear()
        for _ in range(cfg.frame_stack):
            self._frames.append(rgb)
            self._masks.append(mask)
        return self._observation(0.0, False)

    def step(self, action) -> Observation:
        if self.state is None:
            raise RuntimeError("step() before reset()")
        cfg = self.config
        a = np.clip(np.asarray(action, np.float64).reshape(2), -1.0, 1.0)
        st = self.state
        total_reward = 0.0
        for _ in range(cfg.action_repeat):
            st.agent_vel = DAMPING * st.agent_vel + GAIN * a
            st.agent_pos = np.clip(st.agent_pos + st.agent_vel, 0.0, 1.0)
            if cfg.task == "push":
                self._push_contact(st)
            st.time_step += 1
            if cfg.sparse_reward:
                total_reward += 1.0 if success(st, cfg.task) else 0.0
            else:
                total_reward += reward_for(st, cfg.task)
        done = st.time_step >= cfg.episode_length
        rgb, mask = render(st, cfg, self._bg)
        self._frames.append(rgb)
        self._masks.append(mask)
        return self._observation(total_reward, done)

    @staticmethod
    def _push_contact(st: WorldState) -> None:
        delta = st.object_pos - st.agent_pos
        dist = float(np.linalg.norm(delta))
        overlap = (BASE_RADIUS + OBJECT_RADIUS) - dist
        if overlap > 0:
            direction = delta / dist if dist > 1e-9 else np.array([1.0, 0.0])
            st.object_pos = np.clip(st.object_pos + direction * overlap, 0.0, 1.0)

    def _observation(self, reward: float, done: bool) -> Observation:
        frames = np.concatenate(list(self._frames), axis=0)
        masks = np.stack(list(self._masks), axis=0)
        proprio = np.concatenate([self.state.agent_pos, self.state.agent_vel]).astype(np.float32)
        return Observation(frames=frames, masks=masks, proprio=proprio,
                           reward=float(reward), done=bool(done))

    # -- helpers for analysis and mask tooling -------------------------------

    def joint_pixels(self) -> list[tuple[int, int]]:
        """(row, col) pixel coordinates of base, elbow and wrist."""
        size = self.config.image_size
        out = []
        for p in arm_joints(self.state):
            col = min(size - 1, max(0, int(p[0] * size)))
            row = min(size - 1, max(0, int(p[1] * size)))
            out.append((row, col))
        return out

    def is_success(self) -> bool:
        return success(self.state, self.config.task)


def scripted_reach_action(state: WorldState) -> np.ndarray:
    """Proportional controller toward the goal; oracle policy for tests."""
    delta = state.goal_pos - state.agent_pos
    desired_vel = np.clip(delta * 4.0, -0.08, 0.08)
    a = (desired_vel - DAMPING * state.agent_vel) / GAIN
    return np.clip(a, -1.0, 1.0)
