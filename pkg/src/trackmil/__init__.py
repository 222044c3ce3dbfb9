"""Weakly-supervised multi-person video forgery detection.

A video is a bag of face tracklets with a single real/fake label. The model
aggregates each tracklet over several temporal scales, pools the tracklets
with learnable attention, classifies the video, and localizes the manipulated
tracklets from its per-tracklet gate scores. Everything runs on a small
reverse-mode autodiff core over float64 matrices.
"""

from .aggregation import (
    ShortTermConfig,
    aggregate_instance,
    global_aggregate,
    long_term_aggregate,
    short_term_aggregate,
)
from .autodiff import AdamState, Tensor, adam_step, no_grad
from .bag import (
    attention_weights,
    bag_aggregate,
    bag_aggregate_variant,
    bag_loss,
    classify,
    localize,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    Bag,
    DatasetManifest,
    SyntheticConfig,
    Tracklet,
    generate_synthetic_dataset,
    load_bags,
    load_manifest,
    load_tracklet_features,
    save_manifest,
    save_tracklet_features,
)
from .errors import (
    ConfigurationError,
    DataError,
    DimensionError,
    DivergenceError,
    InputError,
    TrackMILError,
    UndefinedMetricError,
    UsageError,
)
from .metrics import (
    MetricsReport,
    accuracy,
    auc,
    average_precision,
    evaluate,
    search_localization_threshold,
)
from .model import ForgeryDetector, ModelConfig, ModelOutput, compute_loss
from .quality import (
    QualityCorpusConfig,
    QualityNet,
    QualityNetConfig,
    QualitySample,
    filter_tracklet,
    generate_quality_corpus,
    pseudo_score,
    score_face,
    train_quality_net,
)
from .training import TrainConfig, TrainResult, train_model

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "Bag",
    "Tensor",
    "Tracklet",
    "adam_step",
    "no_grad",
    "ShortTermConfig",
    "aggregate_instance",
    "global_aggregate",
    "long_term_aggregate",
    "short_term_aggregate",
    "attention_weights",
    "bag_aggregate",
    "bag_aggregate_variant",
    "bag_loss",
    "classify",
    "localize",
    "load_checkpoint",
    "save_checkpoint",
    "DatasetManifest",
    "SyntheticConfig",
    "generate_synthetic_dataset",
    "load_bags",
    "load_manifest",
    "load_tracklet_features",
    "save_manifest",
    "save_tracklet_features",
    "MetricsReport",
    "accuracy",
    "auc",
    "average_precision",
    "evaluate",
    "search_localization_threshold",
    "ForgeryDetector",
    "ModelConfig",
    "ModelOutput",
    "compute_loss",
    "QualityCorpusConfig",
    "QualityNet",
    "QualityNetConfig",
    "QualitySample",
    "filter_tracklet",
    "generate_quality_corpus",
    "pseudo_score",
    "score_face",
    "train_quality_net",
    "TrainConfig",
    "TrainResult",
    "train_model",
    "TrackMILError",
    "ConfigurationError",
    "DataError",
    "DimensionError",
    "DivergenceError",
    "InputError",
    "UndefinedMetricError",
    "UsageError",
    "__version__",
]
