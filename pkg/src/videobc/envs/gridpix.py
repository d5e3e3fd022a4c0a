"""gridpix: a procedurally recolored pixel gridworld with a BFS expert.

The agent (red block) starts at a random cell and must reach the goal
(green block) in the far corner of a small grid.
Background tiles get a fresh muted random hue every episode when
``visual_seed_per_episode`` is on, so the encoder has to separate the
action-relevant sprites from per-episode style.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, replace

import numpy as np

from ..errors import ConfigurationError, UsageError
from .config import EnvConfig

# action ids; tie-break order for the expert is up < down < left < right
UP, DOWN, LEFT, RIGHT, NOOP = 0, 1, 2, 3, 4
_MOVES = {UP: (0, -1), DOWN: (0, 1), LEFT: (-1, 0), RIGHT: (1, 0), NOOP: (0, 0)}
_EXPERT_ORDER = (UP, DOWN, LEFT, RIGHT)


@dataclass(frozen=True)
class GridState:
    agent: tuple[int, int]  # (col, row)
    goal: tuple[int, int]
    palette: np.ndarray     # grid_size x grid_size x 3 uint8 tile colors
    t: int
    done: bool
    seed: int
    frames: tuple = ()      # last frame_stack single frames, oldest first


class GridPixEnv:
    """Deterministic gridworld rendered to stacked RGB frames."""

    def __init__(self, cfg: EnvConfig):
        if cfg.env_id != "gridpix":
            raise ConfigurationError("GridPixEnv requires env_id='gridpix'")
        self.cfg = cfg
        self.cell = cfg.image_size // cfg.grid_size
        if self.cell < 3:
            raise ConfigurationError("image_size too small for grid_size")

    # -- episode API -------------------------------------------------------

    def reset(self, seed: int):
        rng = np.random.default_rng(seed)
        n = self.cfg.grid_size
        if self.cfg.visual_seed_per_episode:
            # muted hues: keep tiles dark so the red/green sprites stand out
            palette = rng.integers(20, 90, size=(n, n, 3)).astype(np.uint8)
        else:
            palette = np.full((n, n, 3), 50, dtype=np.uint8)
        # fixed goal corner; the episode-level variation lives in the agent
        # start and the palette restyle
        goal = (n - 1, n - 1)
        while True:
            agent = tuple(int(v) for v in rng.integers(0, n, size=2))
            if agent != goal:
                break
        state = GridState(agent=agent, goal=goal, palette=palette, t=0,
                          done=False, seed=int(seed))
        frame = self._render(state)
        state = replace(state, frames=(frame,) * self.cfg.frame_stack)
        return state, self._observe(state)

    def step(self, state: GridState, action: int):
        if state.done:
            raise UsageError("step() called on a finished episode")
        if not 0 <= int(action) < self.cfg.n_actions:
            raise UsageError(f"action {action} out of range")
        agent = state.agent
        reward = 0.0
        done = False
        for _ in range(self.cfg.action_repeat):
            dx, dy = _MOVES[int(action)]
            nx = min(max(agent[0] + dx, 0), self.cfg.grid_size - 1)
            ny = min(max(agent[1] + dy, 0), self.cfg.grid_size - 1)
            agent = (nx, ny)
            if agent == state.goal:
                reward = 1.0
                done = True
                break
        t = state.t + 1  # horizon counts agent steps, not repeated substeps
        if t >= self.cfg.horizon:
            done = True
        new = replace(state, agent=agent, t=t, done=done)
        frame = self._render(new)
        new = replace(new, frames=state.frames[1:] + (frame,))
        return new, self._observe(new), done, reward

    def episode_success(self, state: GridState) -> bool:
        return state.agent == state.goal

    # -- scripted expert ---------------------------------------------------

    def expert_action(self, state: GridState) -> int:
        """First move of a BFS shortest path to the goal."""
        if state.done:
            raise UsageError("expert_action() on a finished episode")
        if self.cfg.expert_noise > 0.0:
            rng = np.random.default_rng((state.seed, state.t, 0xE))
            if rng.random() < self.cfg.expert_noise:
                return int(rng.integers(0, self.cfg.n_actions))
        n = self.cfg.grid_size
        start, goal = state.agent, state.goal
        if start == goal:
            return NOOP
        parent_move = {start: None}
        q = deque([start])
        while q:
            cell = q.popleft()
            if cell == goal:
                break
            for a in _EXPERT_ORDER:
                dx, dy = _MOVES[a]
                nxt = (min(max(cell[0] + dx, 0), n - 1),
                       min(max(cell[1] + dy, 0), n - 1))
                if nxt not in parent_move:
                    parent_move[nxt] = (cell, a)
                    q.append(nxt)
        # walk back from the goal to find the first move
        cell = goal
        while parent_move[cell][0] != start:
            cell = parent_move[cell][0]
        return parent_move[cell][1]

    # -- rendering ---------------------------------------------------------

    def _render(self, state: GridState) -> np.ndarray:
        img = np.kron(state.palette,
                      np.ones((self.cell, self.cell, 1), dtype=np.uint8))
        self._draw_block(img, state.goal, (40, 220, 40))
        self._draw_block(img, state.agent, (230, 30, 30))
        pad = self.cfg.image_size - img.shape[0]
        if pad:
            img = np.pad(img, ((0, pad), (0, pad), (0, 0)))
        return img

    def _observe(self, state: GridState) -> np.ndarray:
        if self.cfg.frame_stack == 1:
            return state.frames[0]
        return np.concatenate(state.frames, axis=2)

    def _draw_block(self, img: np.ndarray, cell_xy, color):
        """6x6 sprite (scaled with cell size) centered in its cell."""
        x, y = cell_xy
        size = max(2, min(6, self.cell - 2))
        off = (self.cell - size) // 2
        r0, c0 = y * self.cell + off, x * self.cell + off
        img[r0:r0 + size, c0:c0 + size] = np.array(color, dtype=np.uint8)
