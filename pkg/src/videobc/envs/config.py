"""Environment configuration."""

from __future__ import annotations

from dataclasses import dataclass, field

from ..errors import ConfigurationError

GRIDPIX = "gridpix"
POINTPIX = "pointpix"

_DEFAULTS = {
    GRIDPIX: dict(frame_stack=1, horizon=40, action_repeat=1,
                  visual_seed_per_episode=True),
    POINTPIX: dict(frame_stack=1, horizon=30, action_repeat=1,
                   visual_seed_per_episode=False, expert_noise=0.15),
}


@dataclass
class EnvConfig:
    """Parameters of a toy pixel MDP (observation/action spaces, dynamics knobs)."""

    env_id: str = GRIDPIX
    grid_size: int = 8
    image_size: int = 64
    frame_stack: int = 1
    horizon: int = 40
    visual_seed_per_episode: bool = True
    action_repeat: int = 1
    expert_noise: float = 0.0  # probability / scale of expert action corruption

    def __post_init__(self):
        if self.env_id not in (GRIDPIX, POINTPIX):
            raise ConfigurationError(f"unknown env_id {self.env_id!r}")
        if self.image_size < 16:
            raise ConfigurationError("image_size must be >= 16")
        if self.horizon < 1:
            raise ConfigurationError("horizon must be >= 1")
        if self.grid_size < 4:
            raise ConfigurationError("grid_size must be >= 4")
        if self.frame_stack < 1:
            raise ConfigurationError("frame_stack must be >= 1")
        if self.action_repeat < 1:
            raise ConfigurationError("action_repeat must be >= 1")
        if not 0.0 <= self.expert_noise <= 1.0:
            raise ConfigurationError("expert_noise must be in [0, 1]")

    @classmethod
    def for_env(cls, env_id: str, **overrides) -> "EnvConfig":
        """Config with per-environment defaults (frame stack, horizon, repeat)."""
        kwargs = dict(_DEFAULTS.get(env_id, {}))
        kwargs.update(overrides)
        return cls(env_id=env_id, **kwargs)

    @property
    def discrete(self) -> bool:
        return self.env_id == GRIDPIX

    @property
    def n_actions(self) -> int:
        """Discrete action count (gridpix only)."""
        return 5

    @property
    def action_dim(self) -> int:
        """Continuous action dimension (pointpix only)."""
        return 2

    @property
    def obs_channels(self) -> int:
        return 3 * self.frame_stack

    @property
    def obs_shape(self) -> tuple[int, int, int]:
        return (self.image_size, self.image_size, self.obs_channels)
