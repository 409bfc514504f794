"""Adam with the inverse-square-root warmup schedule and global-norm clipping."""

from collections.abc import Mapping
from dataclasses import dataclass, field

import numpy as np

from pbd.errors import ContractError, DimensionError, TrainingError
from pbd.tensor.core import Tensor


def lr_schedule(step: int, d_model: int, warmup: int, scale: float = 1.0) -> float:
    """scale * d_model^-0.5 * min(step^-0.5, step * warmup^-1.5)."""
    if step < 1:
        raise ContractError(f"learning-rate schedule starts at step 1, got {step}")
    return scale * d_model**-0.5 * min(step**-0.5, step * warmup**-1.5)


@dataclass
class OptimState:
    """Adam moments keyed by parameter storage name."""
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_parameters(
        cls, params: Mapping[str, Tensor], beta1: float = 0.9, beta2: float = 0.98, eps: float = 1e-9
    ) -> "OptimState":
        return cls(
            beta1, beta2, eps, 0,
            {name: np.zeros_like(p.data) for name, p in params.items()},
            {name: np.zeros_like(p.data) for name, p in params.items()},
        )

    def meta(self) -> dict[str, float | int]:
        return {"beta1": self.beta1, "beta2": self.beta2, "eps": self.eps, "step": self.step}


def global_norm(grads: Mapping[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values())))


def clip_grad_norm(
    grads: Mapping[str, np.ndarray], max_norm: float
) -> tuple[dict[str, np.ndarray], float]:
    """Scale all gradients by min(1, max_norm / norm); max_norm <= 0 disables clipping."""
    norm = global_norm(grads)
    if max_norm <= 0 or norm <= max_norm:
        return dict(grads), norm
    factor = max_norm / norm
    return {name: (g * factor).astype(g.dtype) for name, g in grads.items()}, norm


def adam_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, np.ndarray],
    state: OptimState,
    lr: float,
) -> None:
    """Bias-corrected Adam update, in place on parameter storage.

    Raises:
        TrainingError: a gradient contains NaN or inf; nothing is updated.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name}")
        if name not in state.m:
            raise ContractError(f"no optimizer state for parameter {name}")
        if g.shape != params[name].shape:
            raise DimensionError(f"{name}: gradient {g.shape} vs parameter {params[name].shape}")

    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1**t
    correction2 = 1.0 - b2**t
    for name, g in grads.items():
        p = params[name]
        m = state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        v = state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        update = lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
        p.data -= update.astype(p.dtype)
