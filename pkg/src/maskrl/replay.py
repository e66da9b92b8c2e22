"""Bounded experience storage with frame-stacked, n-step sampling.

Each environment frame is stored once (compressed); observation stacks are
reconstructed at sample time by walking back within the episode, padding
with the episode's earliest stored frame. Sampled windows never cross an
episode boundary, and windows hitting a true terminal are truncated with a
zero bootstrap factor.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .numerics import DimensionError, Rng


class ReplayNotReady(RuntimeError):
    """Raised when no complete sampling window exists yet; retry later."""


@dataclass
class Transition:
    frame: np.ndarray            # (3, H, W) uint8, single frame
    mask: np.ndarray             # (H, W) uint8 binary
    action: np.ndarray | None    # None only for an episode's final frame row
    reward: float
    terminal: bool               # true environment terminal (not time limit)
    episode_id: int
    step_index: int


class _Row:
    __slots__ = ("frame_z", "mask_z", "action", "reward", "terminal",
                 "episode_id", "step_index")

    def __init__(self, frame_z, mask_z, action, reward, terminal, episode_id, step_index):
        self.frame_z = frame_z
        self.mask_z = mask_z
        self.action = action
        self.reward = reward
        self.terminal = terminal
        self.episode_id = episode_id
        self.step_index = step_index


def _compress_frame(frame: np.ndarray) -> bytes:
    return zlib.compress(np.ascontiguousarray(frame, np.uint8).tobytes(), 1)


def _compress_mask(mask: np.ndarray) -> bytes:
    return zlib.compress(np.packbits(np.asarray(mask, np.uint8)).tobytes(), 1)


@dataclass
class Batch:
    obs: np.ndarray          # (B, 3*S, H, W) uint8
    masks: np.ndarray        # (B, S, H, W) uint8
    action: np.ndarray       # (B, A) float32
    n_step_return: np.ndarray  # (B,) float32
    discount: np.ndarray     # (B,) float32: gamma^n, or 0 past a terminal
    next_obs: np.ndarray     # (B, 3*S, H, W) uint8
    next_masks: np.ndarray   # (B, S, H, W) uint8


class ReplayBuffer:
    def __init__(self, capacity: int, frame_shape: tuple[int, int, int], rng: Rng):
        if capacity < 2:
            raise ValueError("capacity must be at least 2")
        self.capacity = capacity
        self.frame_shape = tuple(frame_shape)
        self.mask_shape = self.frame_shape[1:]
        self.rng = rng
        self._rows: list = [None] * capacity
        self._start = 0
        self._count = 0

    def __len__(self) -> int:
        return self._count

    def _row(self, i: int) -> _Row:
        return self._rows[(self._start + i) % self.capacity]

    def push(self, t: Transition) -> None:
        if t.frame.shape != self.frame_shape:
            raise DimensionError(f"frame shape {t.frame.shape} != {self.frame_shape}")
        if t.mask.shape != self.mask_shape:
            raise DimensionError(f"mask shape {t.mask.shape} != {self.mask_shape}")
        action = None if t.action is None else np.asarray(t.action, np.float32)
        row = _Row(_compress_frame(t.frame), _compress_mask(t.mask), action,
                   float(t.reward), bool(t.terminal), t.episode_id, t.step_index)
        if self._count == self.capacity:
            self._rows[self._start] = row
            self._start = (self._start + 1) % self.capacity
        else:
            self._rows[(self._start + self._count) % self.capacity] = row
            self._count += 1

    # -- decoding ------------------------------------------------------------

    def _frame(self, i: int) -> np.ndarray:
        raw = zlib.decompress(self._row(i).frame_z)
        return np.frombuffer(raw, np.uint8).reshape(self.frame_shape)

    def _mask(self, i: int) -> np.ndarray:
        raw = zlib.decompress(self._row(i).mask_z)
        bits = np.unpackbits(np.frombuffer(raw, np.uint8))
        n = self.mask_shape[0] * self.mask_shape[1]
        return bits[:n].reshape(self.mask_shape)

    def _stack_indices(self, i: int, frame_stack: int) -> list[int]:
        ep = self._row(i).episode_id
        idxs = [i]
        j = i
        for _ in range(frame_stack - 1):
            if j - 1 >= 0 and self._row(j - 1).episode_id == ep:
                j -= 1
            idxs.append(j)  # repeats the earliest available frame when short
        return idxs[::-1]

    def _stacked(self, i: int, frame_stack: int) -> tuple[np.ndarray, np.ndarray]:
        idxs = self._stack_indices(i, frame_stack)
        frames = np.concatenate([self._frame(j) for j in idxs], axis=0)
        masks = np.stack([self._mask(j) for j in idxs], axis=0)
        return frames, masks

    # -- sampling ------------------------------------------------------------

    def _window(self, i: int, n_step: int):
        """(steps_taken, truncated) for anchor i, or None if invalid."""
        row = self._row(i)
        if row.action is None:
            return None
        ep = row.episode_id
        steps = 0
        for k in range(n_step):
            j = i + k
            if j >= self._count:
                return None
            rj = self._row(j)
            if rj.episode_id != ep or rj.action is None:
                return None
            steps += 1
            if rj.terminal:
                return steps, True
        # the bootstrap frame must also exist inside the episode
        j = i + steps
        if j >= self._count or self._row(j).episode_id != ep:
            return None
        return steps, False

    def sample_batch(self, batch: int, n_step: int, frame_stack: int,
                     discount: float) -> Batch:
        if self._count == 0:
            raise ReplayNotReady("empty buffer")
        obs, masks, acts, rets, discs, nobs, nmasks = [], [], [], [], [], [], []
        attempts = 0
        max_attempts = max(1000, 200 * batch)
        while len(obs) < batch:
            attempts += 1
            if attempts > max_attempts:
                raise ReplayNotReady(
                    f"no complete {n_step}-step window in {self._count} rows")
            i = int(self.rng.integers(0, self._count))
            win = self._window(i, n_step)
            if win is None:
                continue
            steps, truncated = win
            ret = 0.0
            for k in range(steps):
                ret += (discount ** k) * self._row(i + k).reward
            f, m = self._stacked(i, frame_stack)
            if truncated:
                # the post-terminal frame row when stored, else the last
                # transition row; either way the bootstrap weight is zero
                j = i + steps
                if j >= self._count or self._row(j).episode_id != self._row(i).episode_id:
                    j = i + steps - 1
                nf, nm = self._stacked(j, frame_stack)
                disc = 0.0
            else:
                nf, nm = self._stacked(i + steps, frame_stack)
                disc = discount ** steps
            obs.append(f)
            masks.append(m)
            acts.append(self._row(i).action)
            rets.append(ret)
            discs.append(disc)
            nobs.append(nf)
            nmasks.append(nm)
        return Batch(
            obs=np.stack(obs), masks=np.stack(masks),
            action=np.stack(acts).astype(np.float32),
            n_step_return=np.asarray(rets, np.float32),
            discount=np.asarray(discs, np.float32),
            next_obs=np.stack(nobs), next_masks=np.stack(nmasks))

    def valid_anchor_count(self, n_step: int) -> int:
        return sum(1 for i in range(self._count) if self._window(i, n_step) is not None)

    # -- on-disk spill --------------------------------------------------------

    def dump_episode(self, directory, episode_id: int) -> Path:
        """One file pair per episode: a JSON manifest plus raw frame blobs."""
        rows = [self._row(i) for i in range(self._count)
                if self._row(i).episode_id == episode_id]
        if not rows:
            raise KeyError(f"episode {episode_id} not in buffer")
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        blob = bytearray()
        entries = []
        for r in rows:
            entries.append({
                "step_index": r.step_index,
                "reward": r.reward,
                "terminal": r.terminal,
                "action": None if r.action is None else r.action.tolist(),
                "frame_offset": len(blob), "frame_nbytes": len(r.frame_z),
                "mask_offset": len(blob) + len(r.frame_z), "mask_nbytes": len(r.mask_z),
            })
            blob.extend(r.frame_z)
            blob.extend(r.mask_z)
        base = directory / f"episode_{episode_id:06d}"
        with open(base.with_suffix(".json"), "w") as fp:
            json.dump({"episode_id": episode_id, "frame_shape": list(self.frame_shape),
                       "rows": entries}, fp)
        base.with_suffix(".bin").write_bytes(bytes(blob))
        return base

    @staticmethod
    def load_episode(base) -> list[Transition]:
        base = Path(base)
        with open(base.with_suffix(".json")) as fp:
            manifest = json.load(fp)
        blob = base.with_suffix(".bin").read_bytes()
        frame_shape = tuple(manifest["frame_shape"])
        n = frame_shape[1] * frame_shape[2]
        out = []
        for e in manifest["rows"]:
            fz = blob[e["frame_offset"]:e["frame_offset"] + e["frame_nbytes"]]
            mz = blob[e["mask_offset"]:e["mask_offset"] + e["mask_nbytes"]]
            frame = np.frombuffer(zlib.decompress(fz), np.uint8).reshape(frame_shape)
            bits = np.unpackbits(np.frombuffer(zlib.decompress(mz), np.uint8))
            mask = bits[:n].reshape(frame_shape[1:])
            out.append(Transition(
                frame=frame, mask=mask,
                action=None if e["action"] is None else np.asarray(e["action"], np.float32),
                reward=e["reward"], terminal=e["terminal"],
                episode_id=manifest["episode_id"], step_index=e["step_index"]))
        return out
