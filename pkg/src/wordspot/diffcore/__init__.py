"""Minimal reverse-mode differentiation over numpy arrays (float64)."""

from .gradcheck import FD_STEP, GradCheckReport, grad_check
from .node import Node, backward, constant, parameter
from .ops import (
    BCE_CLAMP,
    TppConfig,
    add,
    avg_pool2d,
    bce_loss,
    concat_channels,
    conv2d,
    dropout,
    linear,
    max_pool2d,
    relu,
    sigmoid,
    tpp,
)
from .optim import AdamState, adam_step, he_init

__all__ = [
    "AdamState", "BCE_CLAMP", "FD_STEP", "GradCheckReport", "Node", "TppConfig",
    "adam_step", "add", "avg_pool2d", "backward", "bce_loss", "concat_channels",
    "constant", "conv2d", "dropout", "grad_check", "he_init", "linear", "max_pool2d",
    "parameter", "relu", "sigmoid", "tpp",
]
