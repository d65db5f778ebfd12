"""Residual attention network for univariate time-series classification.

A weight-tied transformer encoder and a residual 1-D CNN read the same
series; their pooled features are fused and classified with a softmax head.
Everything runs on a small float64 reverse-mode autodiff core
(:mod:`ran.tensor`).
"""
__version__ = "0.1.0"

from .data import LabeledSeries, SplitDataset, build_split, parse_ucr_file, z_normalize
from .encoder import EncoderConfig
from .model import RanConfig, forward_logits, init_params, predict
from .resnet import BranchConfig
from .train import TrainConfig, evaluate_accuracy, fit

__all__ = [
    "BranchConfig",
    "EncoderConfig",
    "LabeledSeries",
    "RanConfig",
    "SplitDataset",
    "TrainConfig",
    "build_split",
    "evaluate_accuracy",
    "fit",
    "forward_logits",
    "init_params",
    "parse_ucr_file",
    "predict",
    "z_normalize",
]
