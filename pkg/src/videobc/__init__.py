"""Imitation learning from action-free videos via quantized latent actions."""

from .envs import (EnvConfig, ExpertPolicy, RandomPolicy, VideoDataset,
                   evaluate_policy, make_env, record_expert_videos)
from .features import FeaturePretrainConfig, FeaturePretrainer
from .latentact import LatentActionConfig, LatentActionLearner
from .online import OnlineConfig, OnlineImitator, PolicyBundle

__version__ = "0.1.0"

__all__ = [
    "EnvConfig", "ExpertPolicy", "RandomPolicy", "VideoDataset",
    "evaluate_policy", "make_env", "record_expert_videos",
    "FeaturePretrainConfig", "FeaturePretrainer",
    "LatentActionConfig", "LatentActionLearner",
    "OnlineConfig", "OnlineImitator", "PolicyBundle",
]
