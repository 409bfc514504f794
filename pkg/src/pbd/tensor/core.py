"""Dense tensors with tape-based reverse-mode differentiation.

A Tensor wraps a contiguous numpy array. While a Tape is active on the
current thread, every operation whose inputs require gradients appends a
record (output, inputs, backward closure) to it. backward() replays the
records in exact reverse order, accumulating gradients keyed by tensor
identity.
"""

import threading
from collections.abc import Callable, Iterator, Sequence
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from pbd.errors import ContractError

DTYPES: dict[str, np.dtype] = {
    "float32": np.dtype(np.float32),
    "float64": np.dtype(np.float64),
}

_local = threading.local()


def default_dtype() -> np.dtype:
    """Float type for tensors created from non-float data on this thread."""
    return getattr(_local, "dtype", DTYPES["float32"])


@contextmanager
def precision(name: str) -> Iterator[None]:
    """Temporarily switch the default float type ("float32" or "float64")."""
    if name not in DTYPES:
        raise ContractError(f"unknown precision: {name}")
    previous = default_dtype()
    _local.dtype = DTYPES[name]
    try:
        yield
    finally:
        _local.dtype = previous


class Tensor:
    """Dense float array that may take part in differentiation."""

    __slots__ = ("data", "requires_grad", "name", "__weakref__")

    def __init__(
        self,
        data: Any,
        requires_grad: bool = False,
        name: str | None = None,
        dtype: np.dtype | str | None = None,
    ) -> None:
        arr = np.asarray(data)
        if dtype is None:
            dtype = arr.dtype if arr.dtype.kind == "f" else default_dtype()
        self.data: np.ndarray = np.array(arr, dtype=dtype, copy=True, order="C")
        self.requires_grad = requires_grad
        self.name = name

    @classmethod
    def _wrap(cls, data: np.ndarray, requires_grad: bool) -> "Tensor":
        # Op outputs are fresh arrays and are not copied again.
        out = cls.__new__(cls)
        out.data = np.ascontiguousarray(data)
        out.requires_grad = requires_grad
        out.name = None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return int(self.data.size)

    def numpy(self) -> np.ndarray:
        """Copy of the underlying values."""
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single value, shape is {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def __repr__(self) -> str:
        req = ", requires_grad=True" if self.requires_grad else ""
        nm = f", name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{req}{nm})"

    # Operator sugar; implementations live in pbd.tensor.ops.
    def __add__(self, other: Any) -> "Tensor":
        from pbd.tensor import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other: Any) -> "Tensor":
        from pbd.tensor import ops
        return ops.sub(self, other)

    def __mul__(self, other: Any) -> "Tensor":
        from pbd.tensor import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other: float) -> "Tensor":
        from pbd.tensor import ops
        return ops.scale(self, 1.0 / float(other))

    def __neg__(self) -> "Tensor":
        from pbd.tensor import ops
        return ops.scale(self, -1.0)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        from pbd.tensor import ops
        return ops.matmul(self, other)


BackwardFn = Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class TapeRecord:
    """One recorded operation."""
    op: str
    output: Tensor
    inputs: tuple[Tensor, ...]
    backward: BackwardFn


@dataclass
class Tape:
    """Ordered record of differentiable operations on one thread."""
    records: list[TapeRecord] = field(default_factory=list)

    def __enter__(self) -> "Tape":
        stack = _tape_stack()
        stack.append(self)
        return self

    def __exit__(self, *exc: object) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()

    def record(self, op: str, output: Tensor, inputs: tuple[Tensor, ...], fn: BackwardFn) -> None:
        self.records.append(TapeRecord(op, output, inputs, fn))

    def __len__(self) -> int:
        return len(self.records)

    def backward(self, loss: Tensor) -> "Gradients":
        return backward(loss, self)


def _tape_stack() -> list[Tape]:
    stack = getattr(_local, "tapes", None)
    if stack is None:
        stack = []
        _local.tapes = stack
    return stack


def active_tape() -> Tape | None:
    stack = _tape_stack()
    return stack[-1] if stack else None


def apply(op: str, data: np.ndarray, inputs: tuple[Tensor, ...], fn: BackwardFn) -> Tensor:
    """Wrap an op result and record it when gradients are needed."""
    needs_grad = any(t.requires_grad for t in inputs)
    out = Tensor._wrap(data, requires_grad=needs_grad)
    if needs_grad:
        tape = active_tape()
        if tape is not None:
            tape.record(op, out, inputs, fn)
    return out


class Gradients:
    """Gradient buffers keyed by tensor identity.

    Tensors that are not on a path to the loss have a zero gradient.
    """

    def __init__(self) -> None:
        self._grads: dict[int, np.ndarray] = {}
        self._tensors: dict[int, Tensor] = {}

    def accumulate(self, tensor: Tensor, grad: np.ndarray) -> None:
        key = id(tensor)
        if key in self._grads:
            self._grads[key] = self._grads[key] + grad
        else:
            self._grads[key] = np.asarray(grad, dtype=tensor.dtype)
            self._tensors[key] = tensor

    def _raw(self, tensor: Tensor) -> np.ndarray | None:
        return self._grads.get(id(tensor))

    def __contains__(self, tensor: Tensor) -> bool:
        return id(tensor) in self._grads

    def __getitem__(self, tensor: Tensor) -> np.ndarray:
        grad = self._grads.get(id(tensor))
        if grad is None:
            return np.zeros_like(tensor.data)
        return grad

    def __len__(self) -> int:
        return len(self._grads)


def backward(loss: Tensor, tape: Tape | None = None) -> Gradients:
    """Differentiate a scalar loss through the recorded operations.

    Raises:
        ContractError: loss is not a finite scalar, or no tape is available.
    """
    if tape is None:
        tape = active_tape()
    if tape is None:
        raise ContractError("backward() needs a tape")
    if loss.size != 1:
        raise ContractError(f"loss must be a scalar, got shape {loss.shape}")
    if not np.all(np.isfinite(loss.data)):
        raise ContractError("loss is not finite")

    grads = Gradients()
    grads.accumulate(loss, np.ones_like(loss.data))

    for rec in reversed(tape.records):
        g = grads._raw(rec.output)
        if g is None:
            continue
        input_grads = rec.backward(g)
        for inp, ig in zip(rec.inputs, input_grads):
            if ig is None or not inp.requires_grad:
                continue
            grads.accumulate(inp, ig)

    return grads


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad
