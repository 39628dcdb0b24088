"""Trainable two-sided matrix transforms (DCT/DFT initializable) in a small
from-scratch CNN training stack, plus the experiment tooling around it."""

from .layers import InitKind
from .models import Arch, ModelConfig, build_model, default_model_suite, fit_budget
from .training import TrainConfig, run_matrix, train
from .transforms import (
    ComplexPair,
    OutputMode,
    TransformKind,
    build_dct2,
    build_dct3_inverse,
    build_dft,
    build_idft,
)

__version__ = "0.1.0"

__all__ = [
    "Arch",
    "ComplexPair",
    "InitKind",
    "ModelConfig",
    "OutputMode",
    "TrainConfig",
    "TransformKind",
    "build_dct2",
    "build_dct3_inverse",
    "build_dft",
    "build_idft",
    "build_model",
    "default_model_suite",
    "fit_budget",
    "run_matrix",
    "train",
]
