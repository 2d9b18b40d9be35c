"""Small neural-network substrate: layers, MSE, Adam, checkpoints."""

from .layers import mse_loss
from .optim import AdamState, adam_step

__all__ = ["AdamState", "adam_step", "mse_loss"]
