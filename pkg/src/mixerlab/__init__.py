"""Desk-scale laboratory for transfer attacks on MLP-Mixer classifiers.

Builds small Mixer/CNN/MLP classifiers from scratch (explicit per-layer
forward/backward on numpy arrays), runs iterative gradient attacks with
per-layer input masking, and scores cross-architecture fooling rates.
"""

from .attacks import AttackConfig, AttackState, clip_project, run_attack, run_attack_dataset
from .errors import MixerLabError
from .masking import DepthHeads, MaskPolicy, make_wrapper, sample_masks
from .mixer import MixerConfig, MixerModel
from .targets import build_target, predict
from .training import TrainConfig, accuracy, train, train_depth_heads

__all__ = [
    "AttackConfig",
    "AttackState",
    "DepthHeads",
    "MaskPolicy",
    "MixerConfig",
    "MixerLabError",
    "MixerModel",
    "TrainConfig",
    "accuracy",
    "build_target",
    "clip_project",
    "make_wrapper",
    "predict",
    "run_attack",
    "run_attack_dataset",
    "sample_masks",
    "train",
    "train_depth_heads",
]

__version__ = "0.1.0"
