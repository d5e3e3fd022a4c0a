"""Policy evaluation with hidden rewards.

Only this module ever aggregates eval rewards; the learner never sees them.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigurationError
from .config import EnvConfig
from .factory import make_env


class RandomPolicy:
    """Uniform-random baseline policy."""

    def __init__(self, cfg: EnvConfig, seed: int = 0):
        self.cfg = cfg
        self.rng = np.random.default_rng(seed)

    def predict(self, obs):
        if self.cfg.discrete:
            return int(self.rng.integers(0, self.cfg.n_actions))
        return self.rng.uniform(-1.0, 1.0, size=self.cfg.action_dim)


class ExpertPolicy:
    """Scripted expert wrapped as a policy; needs the hidden simulator state."""

    needs_state = True

    def __init__(self, cfg: EnvConfig):
        self.env = make_env(cfg)

    def predict_with_state(self, state, obs):
        return self.env.expert_action(state)


def evaluate_policy(policy, cfg: EnvConfig, n_episodes: int, seed: int) -> dict:
    """Run deterministic evaluation episodes and aggregate hidden rewards.

    ``policy`` exposes ``predict(obs) -> action`` (or ``predict_with_state``
    for the scripted expert). Returns mean_return, std and success_rate.
    """
    if n_episodes <= 0:
        raise ConfigurationError("n_episodes must be positive")
    expected = cfg.obs_shape
    env = make_env(cfg)
    returns = np.zeros(n_episodes)
    successes = np.zeros(n_episodes)
    for ep in range(n_episodes):
        state, obs = env.reset(seed + ep)
        if obs.shape != expected:
            raise ConfigurationError(
                f"observation shape {obs.shape} != configured {expected}")
        total = 0.0
        while not state.done:
            if getattr(policy, "needs_state", False):
                action = policy.predict_with_state(state, obs)
            else:
                action = policy.predict(obs)
            state, obs, done, eval_reward = env.step(state, action)
            total += eval_reward
        returns[ep] = total
        successes[ep] = float(env.episode_success(state))
    return {
        "mean_return": float(returns.mean()),
        "std": float(returns.std()),
        "success_rate": float(successes.mean()),
    }
