"""Low-light image enhancement by per-pixel curve estimation, in plain numpy."""

from .numerics import Tensor, backward, no_grad, zero_grads
from .curves import apply_curves, le_curve_step
from .network import ArchConfig, NetworkWeights, forward, init_weights, mac_count, param_count
from .losses import LossBreakdown, LossConfig, total_loss
from .optim import AdamState, adam_step

__all__ = [
    "Tensor",
    "backward",
    "no_grad",
    "zero_grads",
    "apply_curves",
    "le_curve_step",
    "ArchConfig",
    "NetworkWeights",
    "forward",
    "init_weights",
    "mac_count",
    "param_count",
    "LossBreakdown",
    "LossConfig",
    "total_loss",
    "AdamState",
    "adam_step",
]

__version__ = "0.1.0"
