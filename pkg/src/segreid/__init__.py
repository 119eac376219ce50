"""Mask-guided tri-modal re-identification on a small NumPy autodiff engine."""

from .config import ConfigError, RunConfig, load_config, micro_config
from .data import generate_dataset, load_dataset
from .metrics import EvalResult, evaluate
from .model import ReidModel
from .tensor import ContractError, DimensionError, NumericError, Tensor
from .train import ablate, evaluate_checkpoint, train

__all__ = [
    "ConfigError", "ContractError", "DimensionError", "EvalResult", "NumericError", "ReidModel",
    "RunConfig", "Tensor", "ablate", "evaluate", "evaluate_checkpoint", "generate_dataset",
    "load_config", "load_dataset", "micro_config", "train",
]
