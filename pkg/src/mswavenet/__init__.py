"""Spatio-temporal graph wavenet toolkit for multi-node wind speed forecasting."""

from .model import ModelConfig, Network, receptive_field
from .training import AdamOptimizer, Checkpoint, Metrics, PlateauScheduler, evaluate, train

__all__ = [
    "ModelConfig",
    "Network",
    "receptive_field",
    "AdamOptimizer",
    "Checkpoint",
    "Metrics",
    "PlateauScheduler",
    "evaluate",
    "train",
]
