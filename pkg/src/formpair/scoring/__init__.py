"""Pair scorers: inverse distance, layout heuristic and the spatial MLP."""

from formpair.scoring.baselines import score_distance, score_heuristic
from formpair.scoring.features import FEATURE_NAMES, extract_features, orient, pair_features
from formpair.scoring.mlp import SpatialClassifier, TrainConfig, gradient_check, mlp_forward, train_classifier

__all__ = [
    "FEATURE_NAMES",
    "SpatialClassifier",
    "TrainConfig",
    "extract_features",
    "gradient_check",
    "mlp_forward",
    "orient",
    "pair_features",
    "score_distance",
    "score_heuristic",
    "train_classifier",
]
