"""Loss, optimizer, training loop and checkpoints."""

from pbd.training.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from pbd.training.loss import cross_entropy_loss
from pbd.training.optim import OptimState, adam_step, clip_grad_norm, lr_schedule
from pbd.training.trainer import (
    Trainer,
    TrainingResult,
    compute_gradients,
    train_from_config,
    train_step,
)

__all__ = [
    "Checkpoint",
    "OptimState",
    "Trainer",
    "TrainingResult",
    "adam_step",
    "clip_grad_norm",
    "compute_gradients",
    "cross_entropy_loss",
    "load_checkpoint",
    "lr_schedule",
    "save_checkpoint",
    "train_from_config",
    "train_step",
]
