"""Central finite-difference checks of tape gradients."""

from collections.abc import Callable, Mapping
from dataclasses import dataclass, field

import numpy as np

from pbd.tensor.core import Tape, Tensor, backward


@dataclass
class GradientCheck:
    """Worst relative error per checked tensor."""
    errors: dict[str, float] = field(default_factory=dict)
    tolerance: float = 1e-4

    @property
    def worst(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.worst < self.tolerance


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |a - n| scaled by the larger of the two gradients' magnitudes."""
    denom = max(float(np.abs(analytic).max(initial=0.0)),
                float(np.abs(numeric).max(initial=0.0)), 1e-8)
    return float(np.abs(analytic - numeric).max(initial=0.0)) / denom


def numeric_gradient(fn: Callable[[], Tensor], tensor: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar fn() with respect to every element of tensor."""
    grad = np.zeros_like(tensor.data, dtype=np.float64)
    flat = tensor.data.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + h
        plus = fn().item()
        flat[i] = original - h
        minus = fn().item()
        flat[i] = original
        grad.reshape(-1)[i] = (plus - minus) / (2 * h)
    return grad


def check_gradients(
    fn: Callable[[], Tensor],
    tensors: Mapping[str, Tensor],
    h: float = 1e-5,
    tolerance: float = 1e-4,
) -> GradientCheck:
    """Compare tape gradients of fn() against finite differences.

    fn must be deterministic and rebuild its graph on every call. Use
    float64 tensors: float32 rounding swamps the difference quotient.
    """
    with Tape() as tape:
        loss = fn()
    grads = backward(loss, tape)

    result = GradientCheck(tolerance=tolerance)
    for name, tensor in tensors.items():
        numeric = numeric_gradient(fn, tensor, h)
        result.errors[name] = relative_error(grads[tensor], numeric)
    return result
