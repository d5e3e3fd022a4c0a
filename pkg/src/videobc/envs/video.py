"""Action-free video datasets recorded from scripted experts.

File format (all integers little-endian): magic "BCVV", u32 version=1,
u32 H, u32 W, u32 channels, u64 frame_count, u64 episode_count,
episode_starts as u64 array, then raw frame bytes row-major.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import DatasetError
from .config import EnvConfig
from .factory import make_env

MAGIC = b"BCVV"
VERSION = 1


@dataclass
class VideoDataset:
    """Ordered expert frames with episode boundaries; no actions, no rewards."""

    frames: np.ndarray          # (n, H, W, C) uint8
    episode_starts: np.ndarray  # sorted int64, first entry 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.frames = np.ascontiguousarray(self.frames, dtype=np.uint8)
        self.episode_starts = np.asarray(self.episode_starts, dtype=np.int64)
        if len(self.frames) == 0:
            raise DatasetError("empty video dataset")
        if len(self.episode_starts) == 0 or self.episode_starts[0] != 0:
            raise DatasetError("episode_starts must begin with 0")
        if np.any(np.diff(self.episode_starts) <= 0):
            raise DatasetError("episode_starts must be strictly increasing")

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def n_episodes(self) -> int:
        return len(self.episode_starts)

    def pair_indices(self) -> np.ndarray:
        """Indices i such that (i, i+1) stays inside one episode."""
        valid = np.ones(len(self.frames) - 1, dtype=bool)
        for s in self.episode_starts[1:]:
            valid[s - 1] = False
        return np.nonzero(valid)[0]

    def truncate(self, n_frames: int) -> "VideoDataset":
        """First n_frames frames, clipping episode boundaries accordingly."""
        if n_frames < 2:
            raise DatasetError("need at least 2 frames")
        n = min(n_frames, len(self.frames))
        starts = self.episode_starts[self.episode_starts < n]
        return VideoDataset(self.frames[:n].copy(), starts.copy(), dict(self.meta))

    # -- serialization -----------------------------------------------------

    def save(self, path) -> None:
        path = Path(path)
        n, h, w, c = self.frames.shape
        try:
            with open(path, "wb") as fh:
                fh.write(MAGIC)
                fh.write(struct.pack("<IIII", VERSION, h, w, c))
                fh.write(struct.pack("<QQ", n, len(self.episode_starts)))
                fh.write(self.episode_starts.astype("<u8").tobytes())
                fh.write(self.frames.tobytes())
        except OSError as exc:
            raise DatasetError(f"cannot write {path}: {exc}") from exc

    @classmethod
    def load(cls, path) -> "VideoDataset":
        path = Path(path)
        try:
            with open(path, "rb") as fh:
                if fh.read(4) != MAGIC:
                    raise DatasetError(f"{path}: bad magic")
                version, h, w, c = struct.unpack("<IIII", fh.read(16))
                if version != VERSION:
                    raise DatasetError(f"{path}: unsupported version {version}")
                n, n_ep = struct.unpack("<QQ", fh.read(16))
                starts = np.frombuffer(fh.read(8 * n_ep), dtype="<u8")
                raw = fh.read(n * h * w * c)
                if len(raw) != n * h * w * c:
                    raise DatasetError(f"{path}: truncated frame data")
                frames = np.frombuffer(raw, dtype=np.uint8).reshape(n, h, w, c)
        except OSError as exc:
            raise DatasetError(f"cannot read {path}: {exc}") from exc
        return cls(frames.copy(), starts.astype(np.int64))


def record_labeled_transitions(cfg: EnvConfig, n: int, seed: int):
    """Expert rollouts kept WITH actions, as (obs, action, next_obs) triples.

    Only the offline-labeled variant and diagnostics use this; the video
    pipeline itself never sees expert actions.
    """
    env = make_env(cfg)
    out = []
    ep_seed = seed
    while len(out) < n:
        state, obs = env.reset(ep_seed)
        ep_seed += 1
        while not state.done and len(out) < n:
            action = env.expert_action(state)
            state, next_obs, _, _ = env.step(state, action)
            out.append((obs, action, next_obs))
            obs = next_obs
    return out


def record_expert_videos(cfg: EnvConfig, n_frames: int, seed: int) -> VideoDataset:
    """Roll the scripted expert and keep only the frames.

    Actions and rewards are discarded; episode boundaries are retained so
    that pair sampling never straddles a reset.
    """
    if n_frames < 2 * cfg.horizon:
        raise DatasetError("n_frames must be at least 2 * horizon")
    env = make_env(cfg)
    frames: list[np.ndarray] = []
    starts: list[int] = []
    ep_seed = seed
    while len(frames) < n_frames:
        starts.append(len(frames))
        state, obs = env.reset(ep_seed)
        ep_seed += 1
        frames.append(obs)
        while not state.done and len(frames) < n_frames:
            state, obs, done, _ = env.step(state, env.expert_action(state))
            frames.append(obs)
    meta = dict(env_id=cfg.env_id, seed=seed, image_size=cfg.image_size,
                frame_stack=cfg.frame_stack, horizon=cfg.horizon)
    return VideoDataset(np.stack(frames), np.array(starts, dtype=np.int64), meta)
