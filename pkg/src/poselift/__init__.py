"""Lift 2D keypoint sequences to 3D with a dual-stream attention/graph network."""

from .accounting import CostReport, count_macs, count_params
from .metrics import MetricsReport, aggregate_report, mpjpe, p_mpjpe
from .model import ModelConfig, init_params, load_checkpoint, model_forward, save_checkpoint
from .tensor import Tape, Tensor, backward, no_grad

__version__ = "0.1.0"

__all__ = [
    "CostReport",
    "MetricsReport",
    "ModelConfig",
    "Tape",
    "Tensor",
    "aggregate_report",
    "backward",
    "count_macs",
    "count_params",
    "init_params",
    "load_checkpoint",
    "model_forward",
    "mpjpe",
    "no_grad",
    "p_mpjpe",
    "save_checkpoint",
]
