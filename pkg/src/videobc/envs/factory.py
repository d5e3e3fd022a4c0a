"""Environment construction."""

from __future__ import annotations

from .config import EnvConfig


def make_env(cfg: EnvConfig):
    if cfg.env_id == "gridpix":
        from .gridpix import GridPixEnv
        return GridPixEnv(cfg)
    from .pointpix import PointPixEnv
    return PointPixEnv(cfg)
