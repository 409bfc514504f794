"""Attention and attention masks.

Masks are boolean (True = may attend) and compose by logical AND. They are
turned into additive -1e9 logits only inside scaled_dot_attention.

Pseudo-bidirectional masks lay keys out as [source 1..n | target 1..m].
Decoder query i (predicting output token i, fed y_{i-1}) sees target keys
1..i and the copied source keys i+offset..n; offset=1 is the default copy
region, offset=0 additionally exposes the aligned source position i.
"""

import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from pbd.errors import ConfigError, ContractError, DimensionError
from pbd.tensor import ops
from pbd.tensor.core import Tensor

MASKED_LOGIT = -1e9


@dataclass(frozen=True, eq=False)
class AttentionMask:
    """Boolean [..., num_queries, num_keys] matrix of allowed keys."""
    allowed: np.ndarray
    key_layout: tuple[int, int] | None = None  # (source_len, target_len) for [source | target]

    @property
    def num_queries(self) -> int:
        return int(self.allowed.shape[-2])

    @property
    def num_keys(self) -> int:
        return int(self.allowed.shape[-1])

    def __and__(self, other: "AttentionMask") -> "AttentionMask":
        try:
            allowed = np.logical_and(self.allowed, other.allowed)
        except ValueError as e:
            raise DimensionError(
                f"cannot combine masks {self.allowed.shape} and {other.allowed.shape}"
            ) from e
        return AttentionMask(allowed, self.key_layout or other.key_layout)

    def validate(self) -> None:
        """Every query row must allow at least one key."""
        if not self.allowed.any(axis=-1).all():
            raise ContractError("attention mask has a query row with no allowed key")

    def additive(self, dtype: np.dtype) -> np.ndarray:
        return np.where(self.allowed, 0.0, MASKED_LOGIT).astype(dtype)

    def render(self) -> str:
        """Rows of 0/1; a '|' separates source and target blocks when the layout is known."""
        rows = np.asarray(self.allowed, dtype=int).reshape(-1, self.num_keys)
        lines = []
        for row in rows:
            cells = [str(v) for v in row]
            if self.key_layout is not None:
                n = self.key_layout[0]
                cells = cells[:n] + ["|"] + cells[n:]
            lines.append(" ".join(cells))
        return "\n".join(lines)


def build_causal_mask(m: int) -> AttentionMask:
    """Lower-triangular m x m mask."""
    if m < 1:
        raise ContractError(f"causal mask needs m >= 1, got {m}")
    return AttentionMask(np.tril(np.ones((m, m), dtype=bool)))


def build_pbd_mask(n: int, m: int, offset: int = 1) -> AttentionMask:
    """Pseudo-bidirectional mask over [source 1..n | target 1..m] keys.

    Row i (1-indexed) allows source keys i+offset..n and target keys 1..i.
    """
    if m < 1:
        raise ContractError(f"pbd mask needs m >= 1, got {m}")
    if n < 0:
        raise ContractError(f"pbd mask needs n >= 0, got {n}")
    if offset not in (0, 1):
        raise ContractError(f"copy offset must be 0 or 1, got {offset}")
    i = np.arange(1, m + 1)[:, None]
    j = np.arange(1, n + 1)[None, :]
    source = j >= i + offset
    target = np.tril(np.ones((m, m), dtype=bool))
    return AttentionMask(np.concatenate([source, target], axis=1), key_layout=(n, m))


def build_padding_mask(lengths: Sequence[int] | np.ndarray, max_len: int) -> AttentionMask:
    """Key mask [B, 1, max_len]: True exactly for positions < length."""
    lengths = np.asarray(lengths, dtype=np.int64).reshape(-1)
    if (lengths > max_len).any():
        raise ContractError(f"length {int(lengths.max())} exceeds max_len {max_len}")
    allowed = np.arange(max_len)[None, :] < lengths[:, None]
    return AttentionMask(allowed[:, None, :])


def concat_key_masks(masks: Sequence[AttentionMask]) -> AttentionMask:
    """Join key masks side by side (e.g. source padding | target padding)."""
    arrays = [m.allowed for m in masks]
    shape = np.broadcast_shapes(*(a.shape[:-1] for a in arrays))
    arrays = [np.broadcast_to(a, shape + a.shape[-1:]) for a in arrays]
    layout = (arrays[0].shape[-1], arrays[1].shape[-1]) if len(arrays) == 2 else None
    return AttentionMask(np.concatenate(arrays, axis=-1), key_layout=layout)


@dataclass
class MultiHeadParams:
    """Projection weights of one attention block."""
    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor
    n_heads: int

    def __post_init__(self) -> None:
        d_model = self.w_q.shape[0]
        if d_model % self.n_heads != 0:
            raise ConfigError(f"d_model ({d_model}) not divisible by n_heads ({self.n_heads})")

    @property
    def d_model(self) -> int:
        return int(self.w_q.shape[0])


def scaled_dot_attention(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    mask: AttentionMask | None = None,
    dropout_rate: float = 0.0,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """softmax(Q K^T / sqrt(d) + M) V over the last two axes."""
    d = q.shape[-1]
    if k.shape[-1] != d or k.shape[-2] != v.shape[-2]:
        raise DimensionError(f"attention: Q {q.shape}, K {k.shape}, V {v.shape}")
    scores = ops.scale(ops.matmul(q, ops.swap_last(k)), 1.0 / math.sqrt(d))
    if mask is not None:
        if mask.num_queries not in (1, q.shape[-2]) or mask.num_keys != k.shape[-2]:
            raise DimensionError(
                f"mask {mask.allowed.shape} does not match {q.shape[-2]} queries x {k.shape[-2]} keys"
            )
        mask.validate()
        scores = ops.add(scores, Tensor(mask.additive(q.dtype)))
    weights = ops.softmax(scores, axis=-1)
    weights = ops.dropout(weights, dropout_rate, rng)
    return ops.matmul(weights, v)


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    *lead, length, d = x.shape
    x = ops.reshape(x, (*lead, length, n_heads, d // n_heads))
    axes = list(range(len(lead))) + [len(lead) + 1, len(lead), len(lead) + 2]
    return ops.transpose(x, axes)


def _merge_heads(x: Tensor) -> Tensor:
    *lead, h, length, dh = x.shape
    axes = list(range(len(lead))) + [len(lead) + 1, len(lead), len(lead) + 2]
    x = ops.transpose(x, axes)
    return ops.reshape(x, (*lead, length, h * dh))


def multi_head_attention(
    x_q: Tensor,
    x_kv: Tensor | Sequence[Tensor],
    params: MultiHeadParams,
    mask: AttentionMask | None = None,
    dropout_rate: float = 0.0,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Multi-head attention of x_q over x_kv.

    x_kv may be a list of tensors that are concatenated along the sequence
    axis, e.g. [encoder_states | decoder_states] for pseudo-bidirectional
    self-attention; the mask's key axis follows the same order.
    """
    if not isinstance(x_kv, Tensor):
        x_kv = ops.concat(list(x_kv), axis=-2)
    h = params.n_heads
    q = _split_heads(ops.matmul(x_q, params.w_q), h)
    k = _split_heads(ops.matmul(x_kv, params.w_k), h)
    v = _split_heads(ops.matmul(x_kv, params.w_v), h)
    head_mask = None
    if mask is not None:
        head_mask = AttentionMask(np.expand_dims(mask.allowed, -3), mask.key_layout)
    out = scaled_dot_attention(q, k, v, head_mask, dropout_rate, rng)
    return ops.matmul(_merge_heads(out), params.w_o)
