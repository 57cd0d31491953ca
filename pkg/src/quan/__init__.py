"""Set-attention classifiers for measurement snapshots of quantum states."""

from .model import ModelConfig, MiniSetPlan, QuAN, layers_required, moment_order

__version__ = "0.1.0"

__all__ = ["ModelConfig", "MiniSetPlan", "QuAN", "layers_required", "moment_order", "__version__"]
