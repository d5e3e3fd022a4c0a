from .config import EnvConfig, GRIDPIX, POINTPIX
from .factory import make_env
from .gridpix import GridPixEnv
from .pointpix import PointPixEnv
from .video import VideoDataset, record_expert_videos
from .evaluate import evaluate_policy, RandomPolicy, ExpertPolicy

__all__ = [
    "EnvConfig", "GRIDPIX", "POINTPIX", "make_env", "GridPixEnv",
    "PointPixEnv", "VideoDataset", "record_expert_videos",
    "evaluate_policy", "RandomPolicy", "ExpertPolicy",
]
