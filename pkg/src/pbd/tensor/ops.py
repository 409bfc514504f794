"""Differentiable tensor operations.

Every function takes Tensors, computes its result with numpy and registers
a backward closure through core.apply. Results keep the input float type.
"""

import math
from collections.abc import Sequence

import numpy as np

from pbd.errors import ContractError, DimensionError, IndexRangeError
from pbd.tensor.core import Tensor, apply, unbroadcast


def as_tensor(x: Tensor | float | np.ndarray, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(x, dtype=dtype)


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as e:
        raise DimensionError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from e


# ---------------------------------------------------------------- arithmetic

def add(a: Tensor, b: Tensor | float | np.ndarray) -> Tensor:
    b = as_tensor(b, like=a)
    _broadcast_shape(a, b, "add")

    def backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return apply("add", a.data + b.data, (a, b), backward)


def sub(a: Tensor, b: Tensor | float | np.ndarray) -> Tensor:
    b = as_tensor(b, like=a)
    _broadcast_shape(a, b, "sub")

    def backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

    return apply("sub", a.data - b.data, (a, b), backward)


def mul(a: Tensor, b: Tensor | float | np.ndarray) -> Tensor:
    if isinstance(b, (int, float)):
        return scale(a, float(b))
    b = as_tensor(b, like=a)
    _broadcast_shape(a, b, "mul")

    def backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)

    return apply("mul", a.data * b.data, (a, b), backward)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        return (g * c,)

    return apply("scale", a.data * c, (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product a[..., M, K] @ b[..., K, N]."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: shape mismatch {a.shape} @ {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError as e:
        raise DimensionError(f"matmul: batch dimensions {a.shape} @ {b.shape}") from e

    def backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)

    return apply("matmul", a.data @ b.data, (a, b), backward)


# ------------------------------------------------------------------- shaping

def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    original = a.shape

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        return (g.reshape(original),)

    return apply("reshape", a.data.reshape(tuple(shape)), (a,), backward)


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        return (np.transpose(g, inverse),)

    return apply("transpose", np.transpose(a.data, axes), (a,), backward)


def swap_last(a: Tensor) -> Tensor:
    """Transpose of the last two axes."""
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, axes)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    if not tensors:
        raise ContractError("concat needs at least one tensor")
    if len(tensors) == 1:
        return tensors[0]
    ax = axis % tensors[0].ndim
    for t in tensors[1:]:
        if t.ndim != tensors[0].ndim or any(
            t.shape[i] != tensors[0].shape[i] for i in range(t.ndim) if i != ax
        ):
            raise DimensionError(
                f"concat: incompatible shapes {[t.shape for t in tensors]} on axis {axis}"
            )
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g: np.ndarray) -> list[np.ndarray]:
        return np.split(g, bounds, axis=ax)

    data = np.concatenate([t.data for t in tensors], axis=ax)
    return apply("concat", data, tuple(tensors), backward)


def slice_axis(a: Tensor, axis: int, start: int, stop: int | None = None) -> Tensor:
    ax = axis % a.ndim
    index: list[slice] = [slice(None)] * a.ndim
    index[ax] = slice(start, stop)
    key = tuple(index)

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        full = np.zeros_like(a.data)
        full[key] = g
        return (full,)

    return apply("slice", a.data[key].copy(), (a,), backward)


# ---------------------------------------------------------------- reductions

def sum(a: Tensor, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    data = np.asarray(a.data.sum(axis=axis, keepdims=keepdims), dtype=a.dtype)
    return apply("sum", data, (a,), backward)


def mean(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    count = a.size if axis is None else a.shape[axis]
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


# ---------------------------------------------------------------- pointwise

def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        return (g * out,)

    return apply("exp", out, (a,), backward)


def log(a: Tensor) -> Tensor:
    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        return (g / a.data,)

    return apply("log", np.log(a.data), (a,), backward)


def relu(a: Tensor) -> Tensor:
    positive = a.data > 0

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        return (g * positive,)

    return apply("relu", np.where(positive, a.data, 0).astype(a.dtype), (a,), backward)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(inner)

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x**2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * d_inner),)

    return apply("gelu", 0.5 * x * (1.0 + t), (a,), backward)


def dropout(a: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity when rng is None or rate is 0."""
    if rng is None or rate <= 0.0:
        return a
    keep = (rng.random(a.shape) >= rate).astype(a.dtype) / (1.0 - rate)

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        return (g * keep,)

    return apply("dropout", a.data * keep, (a,), backward)


# ------------------------------------------------------------- normalization

def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Softmax with max subtraction."""
    if not -x.ndim <= axis < x.ndim:
        raise ContractError(f"softmax: axis {axis} invalid for shape {x.shape}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return apply("softmax", out, (x,), backward)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return apply("log_softmax", out, (x,), backward)


def _layer_norm_backward(
    g: np.ndarray, xhat: np.ndarray, inv_std: np.ndarray, gain: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    d = xhat.shape[-1]
    dxhat = g * gain
    dx = inv_std / d * (
        d * dxhat
        - dxhat.sum(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
    )
    lead = tuple(range(g.ndim - 1))
    return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale and shift."""
    if x.shape[-1] != gain.shape[-1] or gain.shape != bias.shape:
        raise DimensionError(
            f"layer_norm: input {x.shape} vs gain {gain.shape} / bias {bias.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered**2).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std

    def backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return _layer_norm_backward(g, xhat, inv_std, gain.data)

    return apply("layer_norm", xhat * gain.data + bias.data, (x, gain, bias), backward)


# ---------------------------------------------------------------- embedding

def embedding_lookup(table: Tensor, ids: np.ndarray) -> Tensor:
    """Gather rows of table[V, D] for integer ids of any shape."""
    ids = np.asarray(ids)
    if ids.dtype.kind not in "iu":
        raise ContractError(f"embedding ids must be integers, got {ids.dtype}")
    vocab = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        raise IndexRangeError(
            f"embedding id out of range [0, {vocab}): min={ids.min()}, max={ids.max()}"
        )

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        full = np.zeros_like(table.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (full,)

    return apply("embedding", table.data[ids], (table,), backward)


def index_select(a: Tensor, indices: np.ndarray | Sequence[int]) -> Tensor:
    """Rows of a along its leading axis (repeats allowed)."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < -a.shape[0] or idx.max() >= a.shape[0]):
        raise IndexRangeError(f"index_select: index out of range for leading axis {a.shape[0]}")

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return apply("index_select", a.data[idx], (a,), backward)
