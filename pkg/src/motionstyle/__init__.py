"""Generative motion stylization for cross-structure skeletons.

Arbitrary skeleton topologies are shifted into a shared canonical motion
space via learned per-joint topology tokens; styles arrive as motion clips
or precomputed cross-modal embeddings and act through AdaIN statistics; a
two-branch single-sequence diffusion model generates stylized motion for
the custom skeleton.
"""

from .config import LossWeights, ModelConfig
from .skeleton import MotionClip, Skeleton, canonical_skeleton
from .bvh import parse_bvh, resample, write_bvh
from .style_embedding import StageOneModel, StyleEmbedding, adain
from .topology_shift import CrossAttentionShift, TopologyToken, shift
from .diffusion import (
    DiffusionSchedule,
    TsdModel,
    build_schedule,
    q_sample,
    sample,
    train_tsd,
    tsd_losses,
)
from .evaluation import FeatureSet, diversity, fmd

__version__ = "0.1.0"

__all__ = [
    "CrossAttentionShift",
    "DiffusionSchedule",
    "FeatureSet",
    "LossWeights",
    "ModelConfig",
    "MotionClip",
    "Skeleton",
    "StageOneModel",
    "StyleEmbedding",
    "TopologyToken",
    "TsdModel",
    "adain",
    "build_schedule",
    "canonical_skeleton",
    "diversity",
    "fmd",
    "parse_bvh",
    "q_sample",
    "resample",
    "sample",
    "shift",
    "train_tsd",
    "tsd_losses",
    "write_bvh",
]
