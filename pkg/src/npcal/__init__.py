"""Post-hoc calibration of classifiers trained on noisy labels."""

from .classifier import TrainConfig, predict, train_classifier
from .data import Dataset, PredictionSet, SyntheticSpec, generate_gaussian_mixture
from .noise import NoiseSpec, inject, true_transition
from .npc import NpcConfig, NpcModel, calibrate, fit_calibrator, iterate_npc, train_npc
from .prior import PriorConfig, build_prior

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "PredictionSet",
    "SyntheticSpec",
    "generate_gaussian_mixture",
    "NoiseSpec",
    "inject",
    "true_transition",
    "TrainConfig",
    "train_classifier",
    "predict",
    "PriorConfig",
    "build_prior",
    "NpcConfig",
    "NpcModel",
    "train_npc",
    "fit_calibrator",
    "calibrate",
    "iterate_npc",
]
