"""Coordinated gesture generation: captioning, unified motion features,
a transformer VAE, hierarchical latent diffusion and evaluation metrics."""

__version__ = "0.1.0"

from .config import RunConfig, desk_profile, load_config, paper_profile
from .features import (
    MotionSequence,
    RawMotion,
    pad_or_truncate,
    project_to_caption_subset,
    recover_positions,
    resample_fps,
    to_unified_features,
)
from .skeleton import Skeleton, build_caption_skeleton, build_default_skeleton

__all__ = [
    "MotionSequence",
    "RawMotion",
    "RunConfig",
    "Skeleton",
    "build_caption_skeleton",
    "build_default_skeleton",
    "desk_profile",
    "load_config",
    "pad_or_truncate",
    "paper_profile",
    "project_to_caption_subset",
    "recover_positions",
    "resample_fps",
    "to_unified_features",
]
