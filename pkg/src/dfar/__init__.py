"""Feedback-aware sequential recommender.

Factorization-heads attention over (key head, key position) pairs with
a feedback label mask, dual positive/negative interest extraction with
cosine disentangling, and contrastive dual prediction towers — built on
a minimal float32 autodiff core with compiled attention kernels and a
pure-numpy fallback.
"""

__version__ = "0.1.0"

from .attention import AttentionConfig, build_label_mask, embed_sequence
from .data import (Batch, Interaction, SynthSpec, load_interactions,
                   synth_generate, temporal_split)
from .model import DfarModel, ModelConfig
from .prediction import LossWeights
from .tensor import GradientTape, Tensor
from .training import TrainConfig, train_model

__all__ = [
    "AttentionConfig", "Batch", "DfarModel", "GradientTape", "Interaction",
    "LossWeights", "ModelConfig", "SynthSpec", "Tensor", "TrainConfig",
    "build_label_mask", "embed_sequence", "load_interactions",
    "synth_generate", "temporal_split", "train_model", "__version__",
]
