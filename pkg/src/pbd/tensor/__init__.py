"""Minimal dense tensor algebra with reverse-mode differentiation."""

from pbd.tensor import ops
from pbd.tensor.core import (
    DTYPES,
    Gradients,
    Tape,
    Tensor,
    active_tape,
    backward,
    default_dtype,
    precision,
)
from pbd.tensor.gradcheck import GradientCheck, check_gradients
from pbd.tensor.ops import (
    embedding_lookup,
    layer_norm,
    matmul,
    softmax,
)

__all__ = [
    "DTYPES",
    "GradientCheck",
    "Gradients",
    "Tape",
    "Tensor",
    "active_tape",
    "backward",
    "check_gradients",
    "default_dtype",
    "embedding_lookup",
    "layer_norm",
    "matmul",
    "ops",
    "precision",
    "softmax",
]
