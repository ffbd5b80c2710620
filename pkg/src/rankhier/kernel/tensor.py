"""Dense tensors, trainable parameters, and the reverse-mode tape.

Values are numpy arrays in row-major order. float32 is the working
precision; float64 is available for finite-difference gradient checks.
A Tape records one forward pass in execution order (which is topological
by construction) and is discarded after backward() -- no graph state
survives between passes.
"""

from __future__ import annotations

import numpy as np

DEFAULT_DTYPE = np.float32


class ShapeError(ValueError):
    """Operand shapes are inconsistent for the requested operation."""


class Tensor:
    """Dense row-major array value.

    Tensors are treated as immutable once produced by an operation.
    In-place mutation is reserved for optimizer updates on parameters.
    """

    __slots__ = ("data",)

    def __init__(self, data, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def tolist(self):
        return self.data.tolist()

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name})"


def as_tensor(x, dtype=None) -> Tensor:
    """Coerce x to a Tensor, passing existing tensors through untouched."""
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


class Parameter(Tensor):
    """Learned tensor with a same-shaped gradient accumulator."""

    __slots__ = ("name", "grad")

    def __init__(self, name: str, data, dtype=None):
        super().__init__(data, dtype=dtype)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def reset_grad(self) -> None:
        self.grad[...] = 0.0

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape}, dtype={self.data.dtype.name})"


class _Record:
    """One recorded operation: inputs, output, and its backward closure."""

    __slots__ = ("op", "inputs", "output", "backward")

    def __init__(self, op, inputs, output, backward):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward = backward


class Tape:
    """Execution-ordered record of differentiable operations.

    Use as a context manager around one forward pass; every op that sees
    a Parameter (or a value derived from one) appends a record. Records
    are appended in forward order, so reverse iteration is a valid
    topological sweep.
    """

    def __init__(self):
        self._records: list[_Record] = []
        self._tracked: set[int] = set()

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _TAPES.pop()
        if popped is not self:
            raise RuntimeError("tape stack corrupted: exited a tape that is not innermost")

    def __len__(self) -> int:
        return len(self._records)

    def tracks(self, t) -> bool:
        """True when gradients must flow through tensor t."""
        return isinstance(t, Parameter) or id(t) in self._tracked

    def record(self, op: str, inputs: tuple, output: Tensor, backward) -> None:
        self._records.append(_Record(op, inputs, output, backward))
        self._tracked.add(id(output))


_TAPES: list[Tape] = []


def active_tape() -> Tape | None:
    """Innermost open tape, or None outside any recording context."""
    return _TAPES[-1] if _TAPES else None


def backward(loss: Tensor, tape: Tape) -> None:
    """Accumulate d(loss)/d(parameter) into every parameter's grad.

    loss must be a single-element tensor. Each record is visited exactly
    once, in reverse execution order. Gradients add onto whatever is
    already in Parameter.grad, so repeated calls accumulate until
    reset_grad().
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for rec in reversed(tape._records):
        g = grads.pop(id(rec.output), None)
        if g is None:
            continue
        input_grads = rec.backward(g)
        for t, gi in zip(rec.inputs, input_grads):
            if gi is None:
                continue
            if isinstance(t, Parameter):
                t.grad += gi
            else:
                acc = grads.get(id(t))
                grads[id(t)] = gi if acc is None else acc + gi
