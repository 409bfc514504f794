"""Label-smoothed cross-entropy over non-padding target positions."""

import numpy as np

from pbd.errors import ContractError, DimensionError, IndexRangeError
from pbd.tensor.core import Tensor, apply


def cross_entropy_loss(
    logits: Tensor, targets: np.ndarray, pad_id: int = 0, smoothing: float = 0.0
) -> Tensor:
    """Mean smoothed negative log-likelihood per non-PAD target token.

    The smoothed target distribution is (1 - eps) * onehot + eps / V. Log-softmax
    and the loss are fused into one recorded op whose gradient is
    (softmax - q) / count on non-PAD rows.
    """
    if not 0.0 <= smoothing < 1.0:
        raise ContractError(f"label smoothing must be in [0, 1), got {smoothing}")
    targets = np.asarray(targets)
    if logits.shape[:-1] != targets.shape:
        raise DimensionError(f"logits {logits.shape} do not match targets {targets.shape}")
    vocab = logits.shape[-1]
    if targets.size and (targets.min() < 0 or targets.max() >= vocab):
        raise IndexRangeError(f"target id outside [0, {vocab})")

    keep = targets != pad_id
    count = int(keep.sum())
    if count == 0:
        raise ContractError("every target position is padding")

    x = logits.data
    shifted = x - x.max(axis=-1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    q = np.full(x.shape, smoothing / vocab, dtype=x.dtype)
    np.put_along_axis(q, targets[..., None], 1.0 - smoothing + smoothing / vocab, axis=-1)
    per_token = -(q * log_probs).sum(axis=-1)
    loss = np.asarray((per_token * keep).sum() / count, dtype=x.dtype)

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        grad = (np.exp(log_probs) - q) * keep[..., None] / count
        return (grad * g,)

    return apply("cross_entropy", loss, (logits,), backward)
