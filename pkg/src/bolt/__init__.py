"""Fused-window transformer for multivariate time-series classification."""

from .model import BolT, ModelConfig, apply_ablation, cwr_loss, total_loss
from .windows import WindowLayout, WindowSpec, plan_windows

__all__ = [
    "BolT",
    "ModelConfig",
    "WindowLayout",
    "WindowSpec",
    "apply_ablation",
    "cwr_loss",
    "plan_windows",
    "total_loss",
]
