"""RAR-U-Net segmentation on a small numpy autograd engine.

Modules:

* :mod:`rarunet.tensor`, :mod:`rarunet.ops`, :mod:`rarunet.optim`: tensors,
  differentiable operations and optimizers.
* :mod:`rarunet.arch`: residual encoders, residual skip paths, attention
  decoders and the assembled model.
* :mod:`rarunet.noise`: calibrated erosion, dilation and elastic label noise.
* :mod:`rarunet.adl`: Dice loss, the exclusion schedule and the training loop.
* :mod:`rarunet.metrics`: overlap and boundary-distance metrics.
* :mod:`rarunet.formats`, :mod:`rarunet.dataset`, :mod:`rarunet.cli`: files,
  synthetic data and the command-line tool.
"""
from .adl import LossLedger, TrainConfig, dice_loss, rank_and_exclude, schedule_n, train
from .arch import ArchConfig, RARUNet, attention_refine, build_model, param_count
from .metrics import MetricReport, UndefinedMetricError, evaluate
from .noise import NoiseSpec, calibrate, corrupt_masks
from .tensor import AutogradError, ShapeError, Tensor, grad_check, no_grad

__version__ = "0.1.0"

__all__ = [
    "ArchConfig",
    "AutogradError",
    "LossLedger",
    "MetricReport",
    "NoiseSpec",
    "RARUNet",
    "ShapeError",
    "Tensor",
    "TrainConfig",
    "UndefinedMetricError",
    "attention_refine",
    "build_model",
    "calibrate",
    "corrupt_masks",
    "dice_loss",
    "evaluate",
    "grad_check",
    "no_grad",
    "param_count",
    "rank_and_exclude",
    "schedule_n",
    "train",
]
