"""Bias-aware sequential recommendation with graph-enriched embeddings."""

from .config import TrainConfig, preset_config
from .estimator import MABSRecRecommender

__all__ = ["TrainConfig", "preset_config", "MABSRecRecommender"]
__version__ = "0.1.0"
