"""Typhoon-center location by heatmap regression.

A self-contained stack: tensors with reverse-mode differentiation, conv/BN
layers, the encoder-decoder network, Gaussian heatmap codec, MSE and
robust-min losses, the mean-location-error metric, an Adam trainer with the
reference schedules, a synthetic cyclone dataset generator, and a CLI.
"""

from tclnet.errors import (AugmentationError, ConfigError, ContractError,
                           CorruptWeightsError, DataLoadError, DivergenceError,
                           DomainError, NumericError, ShapeError, TclError)
from tclnet.heatmap import CenterLabel, HeatmapParams, decode, encode
from tclnet.model import (ModelConfig, TclNet, build, load_weights,
                          parameter_count, save_weights)
from tclnet.objective import (LossValue, MleReport, mle, mse_loss,
                              tcl_crossover, tcl_plus_loss)
from tclnet.tensor import Tensor, backward, grad_check, no_grad
from tclnet.training import (Adam, RepeatSummary, TrainConfig, augment,
                             evaluate, format_mean_std, lr_for_epoch,
                             repeat_runs, train)

__version__ = "0.1.0"

__all__ = [
    "Adam", "AugmentationError", "CenterLabel", "ConfigError", "ContractError",
    "CorruptWeightsError", "DataLoadError", "DivergenceError", "DomainError",
    "HeatmapParams", "LossValue", "MleReport", "ModelConfig", "NumericError",
    "RepeatSummary", "ShapeError", "TclError", "TclNet", "Tensor", "TrainConfig",
    "augment", "backward", "build", "decode", "encode", "evaluate",
    "format_mean_std", "grad_check", "load_weights", "lr_for_epoch", "mle",
    "mse_loss", "no_grad", "parameter_count", "repeat_runs", "save_weights",
    "tcl_crossover", "tcl_plus_loss", "train",
]
