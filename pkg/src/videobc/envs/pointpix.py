"""pointpix: a continuous 2-D point-mass task with a scripted P-controller.

First-order kinematics on the unit square: the action commands a bounded
velocity, so the rendered one-step displacement identifies the action. The
agent (red disc) must end the episode near the goal (green disc).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..errors import ConfigurationError, UsageError
from .config import EnvConfig

GOAL_RADIUS = 0.3
# per-substep displacement per unit action, in half-widths of the arena
GAIN = 0.3
# proportional controller gain (clamped to [-1, 1]^2)
KP = 2.0


@dataclass(frozen=True)
class PointState:
    pos: np.ndarray   # float64 (2,) in [-1, 1]
    goal: np.ndarray  # float64 (2,)
    t: int
    done: bool
    seed: int
    frames: tuple = ()


class PointPixEnv:
    """Continuous point-mass environment rendered to stacked RGB frames."""

    def __init__(self, cfg: EnvConfig):
        if cfg.env_id != "pointpix":
            raise ConfigurationError("PointPixEnv requires env_id='pointpix'")
        self.cfg = cfg

    # -- episode API -------------------------------------------------------

    def reset(self, seed: int):
        rng = np.random.default_rng(seed)
        pos = rng.uniform(-0.8, 0.8, size=2)
        while True:
            goal = rng.uniform(-0.7, 0.7, size=2)
            if np.linalg.norm(goal - pos) > 0.5:
                break
        state = PointState(pos=pos, goal=goal, t=0, done=False,
                           seed=int(seed))
        frame = self._render(state)
        state = replace(state, frames=(frame,) * self.cfg.frame_stack)
        return state, self._observe(state)

    def step(self, state: PointState, action):
        if state.done:
            raise UsageError("step() called on a finished episode")
        a = np.clip(np.asarray(action, dtype=np.float64).reshape(2), -1.0, 1.0)
        pos = state.pos
        for _ in range(self.cfg.action_repeat):
            pos = np.clip(pos + GAIN * a, -1.0, 1.0)
        t = state.t + 1
        done = t >= self.cfg.horizon
        dist = float(np.linalg.norm(pos - state.goal))
        # shaped distance term is for curves only; success is the sparse gate
        reward = -0.01 * dist
        if done and dist <= GOAL_RADIUS:
            reward += 1.0
        new = replace(state, pos=pos, t=t, done=done)
        frame = self._render(new)
        new = replace(new, frames=state.frames[1:] + (frame,))
        return new, self._observe(new), done, reward

    def episode_success(self, state: PointState) -> bool:
        return float(np.linalg.norm(state.pos - state.goal)) <= GOAL_RADIUS

    # -- scripted expert ---------------------------------------------------

    def expert_action(self, state: PointState) -> np.ndarray:
        """Proportional controller toward the goal, clamped to [-1, 1]^2."""
        if state.done:
            raise UsageError("expert_action() on a finished episode")
        a = KP * (state.goal - state.pos)
        if self.cfg.expert_noise > 0.0:
            rng = np.random.default_rng((state.seed, state.t, 0xE))
            a = a + rng.normal(0.0, self.cfg.expert_noise, size=2)
        return np.clip(a, -1.0, 1.0)

    # -- rendering ---------------------------------------------------------

    def _render(self, state: PointState) -> np.ndarray:
        s = self.cfg.image_size
        img = np.full((s, s, 3), 45, dtype=np.uint8)
        # fixed checker texture so shifts are informative for augmentation
        ii = np.arange(s)
        checker = ((ii[:, None] // 8 + ii[None, :] // 8) % 2).astype(np.uint8)
        img += checker[:, :, None] * 12
        self._draw_disc(img, state.goal, (40, 220, 40))
        self._draw_disc(img, state.pos, (230, 30, 30))
        return img

    def _draw_disc(self, img: np.ndarray, xy: np.ndarray, color):
        # antialiased edge: blended border pixels carry sub-pixel position,
        # which integer masks would quantize away
        s = self.cfg.image_size
        row = (xy[1] + 1.0) / 2.0 * (s - 1)
        col = (xy[0] + 1.0) / 2.0 * (s - 1)
        radius = max(2, s // 20)
        ii = np.arange(s)
        dist = np.sqrt((ii[:, None] - row) ** 2 + (ii[None, :] - col) ** 2)
        w = np.clip(radius + 0.5 - dist, 0.0, 1.0)[:, :, None]
        img[:] = (img * (1.0 - w)
                  + np.asarray(color, dtype=np.float64) * w).astype(np.uint8)

    def _observe(self, state: PointState) -> np.ndarray:
        if self.cfg.frame_stack == 1:
            return state.frames[0]
        return np.concatenate(state.frames, axis=2)
