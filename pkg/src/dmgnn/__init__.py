"""Multiscale graph network for skeleton motion prediction, on a small
numpy reverse-mode engine."""
from .config import RunConfig, load_config, reduced_config
from .errors import (ConfigError, ContractError, DataError, DimensionError, DMGNNError, LoadError,
                     ParseError, TrainingError, ValidationError)
from .model import DMGNN, l1_loss, predict, train_step
from .skeleton import BodySpec, MotionSequence, load_body_spec

__all__ = [
    "DMGNN", "RunConfig", "BodySpec", "MotionSequence", "load_config", "reduced_config",
    "load_body_spec", "l1_loss", "predict", "train_step", "DMGNNError", "ConfigError",
    "ValidationError", "DimensionError", "ContractError", "DataError", "ParseError", "LoadError",
    "TrainingError",
]
