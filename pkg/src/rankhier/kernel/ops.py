"""Differentiable kernel operations.

Every op computes with plain numpy and, when a tape is open and an input
is tracked, appends a backward closure to it. Outside a tape the ops are
pure functions, so inference costs no bookkeeping.
"""

from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tensor, active_tape, as_tensor


def _pair(a, b) -> tuple[Tensor, Tensor]:
    """Coerce a binary op's operands, matching scalars to the tensor's dtype."""
    if isinstance(a, Tensor):
        if isinstance(b, Tensor):
            return a, b
        return a, Tensor(np.asarray(b, dtype=a.dtype))
    if isinstance(b, Tensor):
        return Tensor(np.asarray(a, dtype=b.dtype)), b
    return as_tensor(a), as_tensor(b)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum g over axes that numpy broadcasting expanded, back to shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _maybe_record(op, inputs, out, make_backward) -> None:
    tape = active_tape()
    if tape is None:
        return
    flags = tuple(tape.tracks(t) for t in inputs)
    if any(flags):
        tape.record(op, inputs, out, make_backward(flags))


def add(a, b) -> Tensor:
    """Elementwise a + b with numpy broadcasting."""
    a, b = _pair(a, b)
    out = Tensor(a.data + b.data)
    ash, bsh = a.shape, b.shape

    def make(flags):
        ta, tb = flags

        def bwd(g):
            return (_unbroadcast(g, ash) if ta else None,
                    _unbroadcast(g, bsh) if tb else None)

        return bwd

    _maybe_record("add", (a, b), out, make)
    return out


def sub(a, b) -> Tensor:
    """Elementwise a - b with numpy broadcasting."""
    a, b = _pair(a, b)
    out = Tensor(a.data - b.data)
    ash, bsh = a.shape, b.shape

    def make(flags):
        ta, tb = flags

        def bwd(g):
            return (_unbroadcast(g, ash) if ta else None,
                    _unbroadcast(-g, bsh) if tb else None)

        return bwd

    _maybe_record("sub", (a, b), out, make)
    return out


def mul(a, b) -> Tensor:
    """Elementwise a * b with numpy broadcasting."""
    a, b = _pair(a, b)
    out = Tensor(a.data * b.data)
    ad, bd = a.data, b.data

    def make(flags):
        ta, tb = flags

        def bwd(g):
            return (_unbroadcast(g * bd, ad.shape) if ta else None,
                    _unbroadcast(g * ad, bd.shape) if tb else None)

        return bwd

    _maybe_record("mul", (a, b), out, make)
    return out


def neg(x) -> Tensor:
    x = as_tensor(x)
    out = Tensor(-x.data)
    _maybe_record("neg", (x,), out, lambda flags: lambda g: (-g,))
    return out


def matmul(a, b) -> Tensor:
    """Matrix product of two rank-2 tensors."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data)
    ad, bd = a.data, b.data

    def make(flags):
        ta, tb = flags

        def bwd(g):
            return (g @ bd.T if ta else None,
                    ad.T @ g if tb else None)

        return bwd

    _maybe_record("matmul", (a, b), out, make)
    return out


def transpose(x) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 2:
        raise ShapeError(f"transpose needs a rank-2 tensor, got {x.shape}")
    out = Tensor(x.data.T)
    _maybe_record("transpose", (x,), out, lambda flags: lambda g: (g.T,))
    return out


def affine(x, w, b=None) -> Tensor:
    """x @ w.T (+ b): rows of x mapped by a [out, in] weight matrix."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 2 or w.ndim != 2:
        raise ShapeError(f"affine needs rank-2 operands, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"affine input width {x.shape} does not match weight {w.shape}")
    y = x.data @ w.data.T
    inputs: tuple
    if b is None:
        out = Tensor(y)
        inputs = (x, w)
    else:
        b = as_tensor(b)
        if b.shape != (w.shape[0],):
            raise ShapeError(f"affine bias shape {b.shape} does not match weight {w.shape}")
        out = Tensor(y + b.data)
        inputs = (x, w, b)
    xd, wd = x.data, w.data

    def make(flags):
        def bwd(g):
            gx = g @ wd if flags[0] else None
            gw = g.T @ xd if flags[1] else None
            if len(flags) == 2:
                return gx, gw
            gb = g.sum(axis=0) if flags[2] else None
            return gx, gw, gb

        return bwd

    _maybe_record("affine", inputs, out, make)
    return out


def activate(x, kind: str) -> Tensor:
    """Elementwise nonlinearity: 'sigmoid' or 'tanh'."""
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "tanh":
        return tanh(x)
    raise ValueError(f"unknown activation kind: {kind!r}")


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    z = x.data
    # Split by sign so exp never overflows.
    out_data = np.empty_like(z)
    pos = z >= 0
    out_data[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out_data[~pos] = ez / (1.0 + ez)
    out = Tensor(out_data)
    od = out.data
    _maybe_record("sigmoid", (x,), out, lambda flags: lambda g: (g * od * (1.0 - od),))
    return out


def tanh(x) -> Tensor:
    x = as_tensor(x)
    out = Tensor(np.tanh(x.data))
    od = out.data
    _maybe_record("tanh", (x,), out, lambda flags: lambda g: (g * (1.0 - od * od),))
    return out


def softmax(z) -> Tensor:
    """Normalize along the last axis into a probability simplex.

    The row maximum is subtracted before exponentiation so arbitrarily
    large inputs stay finite.
    """
    z = as_tensor(z)
    if z.ndim not in (1, 2):
        raise ShapeError(f"softmax needs a rank-1 or rank-2 tensor, got {z.shape}")
    if z.shape[-1] == 0:
        raise ShapeError("softmax of an empty input")
    shifted = z.data - z.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = Tensor(e / e.sum(axis=-1, keepdims=True))
    pd = out.data

    def make(flags):
        def bwd(g):
            return ((g - (g * pd).sum(axis=-1, keepdims=True)) * pd,)

        return bwd

    _maybe_record("softmax", (z,), out, make)
    return out


def concat(a, b) -> Tensor:
    """Join along the last axis; both rank-1, or rank-2 with equal rows."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != b.ndim or a.ndim not in (1, 2):
        raise ShapeError(f"concat rank mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 2 and a.shape[0] != b.shape[0]:
        raise ShapeError(f"concat row counts disagree: {a.shape} vs {b.shape}")
    out = Tensor(np.concatenate([a.data, b.data], axis=-1))
    split = a.shape[-1]

    def make(flags):
        ta, tb = flags

        def bwd(g):
            return (g[..., :split] if ta else None,
                    g[..., split:] if tb else None)

        return bwd

    _maybe_record("concat", (a, b), out, make)
    return out


def dropout(x, rate: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: zero with probability rate, scale survivors.

    In evaluation mode (training=False) or at rate 0 the input is
    returned unchanged. The keep mask is drawn as rng.random(shape) >= rate.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    x = as_tensor(x)
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs a seeded generator")
    keep = rng.random(x.shape) >= rate
    mask = keep.astype(x.dtype) / np.asarray(1.0 - rate, dtype=x.dtype)
    out = Tensor(x.data * mask)
    _maybe_record("dropout", (x,), out, lambda flags: lambda g: (g * mask,))
    return out


def take_rows(x, idx) -> Tensor:
    """Gather rows of a rank-2 tensor by integer index; backward scatter-adds."""
    x = as_tensor(x)
    if x.ndim != 2:
        raise ShapeError(f"take_rows needs a rank-2 tensor, got {x.shape}")
    idx = np.asarray(idx)
    out = Tensor(x.data[idx])
    xd = x.data

    def make(flags):
        def bwd(g):
            buf = np.zeros_like(xd)
            np.add.at(buf, idx, g)
            return (buf,)

        return bwd

    _maybe_record("take_rows", (x,), out, make)
    return out


def row_sum(x) -> Tensor:
    """Sum each row of a rank-2 tensor, producing a rank-1 tensor."""
    x = as_tensor(x)
    if x.ndim != 2:
        raise ShapeError(f"row_sum needs a rank-2 tensor, got {x.shape}")
    out = Tensor(x.data.sum(axis=1))
    cols = x.shape[1]
    dt = x.dtype

    def make(flags):
        def bwd(g):
            return (np.repeat(g[:, None], cols, axis=1).astype(dt, copy=False),)

        return bwd

    _maybe_record("row_sum", (x,), out, make)
    return out


def total(x) -> Tensor:
    """Sum of all elements, as a scalar tensor."""
    x = as_tensor(x)
    out = Tensor(np.asarray(x.data.sum(), dtype=x.dtype))
    xd = x.data
    _maybe_record("total", (x,), out, lambda flags: lambda g: (np.broadcast_to(g, xd.shape).copy(),))
    return out


def mean(x) -> Tensor:
    """Arithmetic mean of all elements, as a scalar tensor."""
    x = as_tensor(x)
    n = x.size
    if n == 0:
        raise ShapeError("mean of an empty tensor")
    out = Tensor(np.asarray(x.data.mean(), dtype=x.dtype))
    xd = x.data

    def make(flags):
        def bwd(g):
            return ((np.broadcast_to(g, xd.shape) / n).astype(xd.dtype, copy=False),)

        return bwd

    _maybe_record("mean", (x,), out, make)
    return out


def log(x) -> Tensor:
    x = as_tensor(x)
    out = Tensor(np.log(x.data))
    xd = x.data
    _maybe_record("log", (x,), out, lambda flags: lambda g: (g / xd,))
    return out


def clip(x, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; gradient passes through inside the bounds."""
    x = as_tensor(x)
    out = Tensor(np.clip(x.data, lo, hi))
    xd = x.data

    def make(flags):
        inside = ((xd >= lo) & (xd <= hi)).astype(xd.dtype)

        def bwd(g):
            return (g * inside,)

        return bwd

    _maybe_record("clip", (x,), out, make)
    return out


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    out = Tensor(x.data.reshape(shape))
    orig = x.shape
    _maybe_record("reshape", (x,), out, lambda flags: lambda g: (g.reshape(orig),))
    return out
