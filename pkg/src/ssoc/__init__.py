"""Self-learning open-world class centers over embedding datasets.

A deterministic engine that learns one prototype vector per open-world
class through cross-attention between class centers and embedding
batches, trains the attention layer with a supervised + pseudo-label +
pairwise-similarity + entropy objective, and evaluates discovered
classes with Hungarian-aligned accuracy and NMI.
"""

from .attention import (
    AttentionParams,
    ClassCenters,
    cross_attention_backward,
    cross_attention_forward,
    update_centers,
)
from .classifier import BatchProbabilities, infer, predict_probs, probs_backward
from .dataio import (
    EmbeddingDataset,
    MixtureSpec,
    SplitSpec,
    generate_mixture,
    read_dataset,
    split_open_world,
    write_dataset,
)
from .eval import EvalReport, evaluate, hungarian, nmi
from .init import InitMode, init_class_centers, kmeans_pp_seed, lloyd_refine
from .losses import (
    LossBreakdown,
    LossWeights,
    entropy_reg,
    pairwise_bce,
    pseudo_ce,
    supervised_ce,
    total_loss,
)
from .numerics import cosine_similarity, l2_normalize_rows, row_softmax
from .optim import AdamState, Schedule, adam_step, cosine_lr, early_stop_check
from .trainer import EpochReport, TrainConfig, TrainResult, augment_views, train, train_step

__all__ = [
    "AttentionParams",
    "ClassCenters",
    "cross_attention_backward",
    "cross_attention_forward",
    "update_centers",
    "BatchProbabilities",
    "infer",
    "predict_probs",
    "probs_backward",
    "EmbeddingDataset",
    "MixtureSpec",
    "SplitSpec",
    "generate_mixture",
    "read_dataset",
    "split_open_world",
    "write_dataset",
    "EvalReport",
    "evaluate",
    "hungarian",
    "nmi",
    "InitMode",
    "init_class_centers",
    "kmeans_pp_seed",
    "lloyd_refine",
    "LossBreakdown",
    "LossWeights",
    "entropy_reg",
    "pairwise_bce",
    "pseudo_ce",
    "supervised_ce",
    "total_loss",
    "cosine_similarity",
    "l2_normalize_rows",
    "row_softmax",
    "AdamState",
    "Schedule",
    "adam_step",
    "cosine_lr",
    "early_stop_check",
    "EpochReport",
    "TrainConfig",
    "TrainResult",
    "augment_views",
    "train",
    "train_step",
]

__version__ = "0.1.0"
