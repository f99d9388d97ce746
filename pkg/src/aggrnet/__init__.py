"""AGGRNet: attention-guided feature segregation for ordinal image grading, on a numpy autodiff engine."""

from .errors import (AggrNetError, ConfigError, DataError, IntegrityError, NumericError, ShapeError,
                     UsageError)
from .fea import FEA, fea_forward, fem_forward
from .model import AGGRNet, ModelConfig, build_model
from .train import Trainer, TrainConfig, load_checkpoint, save_checkpoint

__all__ = [
    "AGGRNet", "AggrNetError", "ConfigError", "DataError", "FEA", "IntegrityError", "ModelConfig",
    "NumericError", "ShapeError", "TrainConfig", "Trainer", "UsageError", "build_model",
    "fea_forward", "fem_forward", "load_checkpoint", "save_checkpoint",
]
__version__ = "0.1.0"
