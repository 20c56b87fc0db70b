"""Tensor and tape: the bookkeeping half of the reverse-mode engine.

Operations live in :mod:`poselab.autodiff.ops`; they call :func:`record` to put
a backward closure on the active tape. Nothing is recorded when no tape is
active, so a bare forward pass is a plain numpy computation.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    """Raised when operand shapes are inconsistent with an operation."""


class Tensor:
    """n-dimensional float array that can take part in differentiation.

    ``data`` is a numpy array (row-major); ``grad`` stays ``None`` until a
    backward pass reaches the tensor.
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.array(data, dtype=DTYPE, copy=True) if not isinstance(data, np.ndarray) else data
        if arr.dtype != DTYPE:
            arr = arr.astype(DTYPE)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # operator sugar; implementations are in ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    def __radd__(self, other):
        from . import ops
        return ops.add(other, self)

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    def __rmul__(self, other):
        from . import ops
        return ops.mul(other, self)

    def __neg__(self):
        from . import ops
        return ops.scale(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)


@dataclass
class _Node:
    inputs: Sequence[Tensor]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass
class Tape:
    """Ordered record of executed operations.

    Use as a context manager; one tape per training step, cleared with
    :meth:`reset` (or by leaving the ``with`` block and dropping it).
    """

    nodes: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.nodes)

    def reset(self) -> None:
        self.nodes.clear()

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _stack()
        if not stack or stack[-1] is not self:
            raise RuntimeError("tape stack corrupted: exiting a tape that is not active")
        stack.pop()


_local = threading.local()


def _stack() -> list:
    if not hasattr(_local, "stack"):
        _local.stack = []
    return _local.stack


def active_tape() -> Optional[Tape]:
    stack = _stack()
    return stack[-1] if stack else None


def record(inputs: Sequence[Tensor], output: Tensor, backward) -> Tensor:
    """Attach ``backward`` to the active tape if any input needs a gradient."""
    if any(t.requires_grad for t in inputs):
        output.requires_grad = True
        tape = active_tape()
        if tape is not None:
            tape.nodes.append(_Node(tuple(inputs), output, backward))
    return output


def backward(output: Tensor, tape: Optional[Tape] = None) -> None:
    """Accumulate d(output)/d(t) into ``t.grad`` for every reachable tensor.

    Gradients add onto whatever ``grad`` already holds, so two calls without
    zeroing give twice the gradient.
    """
    if output.size != 1 or output.ndim > 1:
        raise ShapeError(f"backward needs a scalar output, got shape {output.shape}")
    tape = tape if tape is not None else active_tape()
    if tape is None:
        raise RuntimeError("backward called with no active tape")
    end = None
    for i in range(len(tape.nodes) - 1, -1, -1):
        if tape.nodes[i].output is output:
            end = i
            break
    if end is None:
        raise RuntimeError("output was not produced on this tape")

    grads: dict[int, np.ndarray] = {id(output): np.ones_like(output.data)}
    touched: dict[int, Tensor] = {id(output): output}
    for node in reversed(tape.nodes[: end + 1]):
        g_out = grads.get(id(node.output))
        if g_out is None:
            continue
        g_ins = node.backward(g_out)
        for t, g in zip(node.inputs, g_ins):
            if g is None or not t.requires_grad:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + g
            else:
                grads[key] = g
                touched[key] = t
    for key, t in touched.items():
        g = grads[key]
        t.grad = g.copy() if t.grad is None else t.grad + g


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(np.asarray(value, dtype=DTYPE))
