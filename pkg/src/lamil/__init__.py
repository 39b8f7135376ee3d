"""Local-attention graph transformer for multiple-instance learning.

Bags of spatially-located feature vectors (tiles from a slide, say) are
classified per bag against multiple binary targets.  Tokens attend over a
kNN graph of their coordinates, so cost stays O(n·k) in the local mode;
a dense global mode exists for equivalence checks and small bags.
"""

from .attention import attention_scores
from .data import (
    Bag,
    Dataset,
    load_bag,
    load_csv_dataset,
    load_manifest,
    save_bag,
    save_dataset,
    stratified_kfold,
    synth_dataset,
)
from .evaluation import CvReport, auroc, cross_validate
from .fileio import FormatError
from .graph import KnnGraph, build_knn
from .loss import loss_grad, pos_weights, weighted_bce
from .model import (
    ModelConfig,
    ModelParams,
    backward,
    count_params,
    forward,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from .optim import OptimState, adamw_step, force_sync, lookahead_sync
from .rng import Stream, derive_stream
from .train import TrainResult, bag_graphs, train_model

__version__ = "0.1.0"

__all__ = [
    "Bag",
    "CvReport",
    "Dataset",
    "FormatError",
    "KnnGraph",
    "ModelConfig",
    "ModelParams",
    "OptimState",
    "Stream",
    "TrainResult",
    "adamw_step",
    "attention_scores",
    "auroc",
    "backward",
    "bag_graphs",
    "build_knn",
    "count_params",
    "cross_validate",
    "derive_stream",
    "force_sync",
    "forward",
    "init_params",
    "load_bag",
    "load_checkpoint",
    "load_csv_dataset",
    "load_manifest",
    "lookahead_sync",
    "loss_grad",
    "pos_weights",
    "save_bag",
    "save_checkpoint",
    "save_dataset",
    "stratified_kfold",
    "synth_dataset",
    "train_model",
    "weighted_bce",
]
