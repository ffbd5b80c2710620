"""Finite-difference verification of tape gradients.

The loss closure must be deterministic: called repeatedly with perturbed
parameter entries it has to rebuild the identical computation (seed any
randomness, e.g. dropout masks, inside the closure). Run checks in
float64; central differences with step 1e-5 resolve gradients far below
the 1e-4 error bound asserted by the test suites.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Parameter, Tape, Tensor, backward


def finite_difference_grad(loss_fn: Callable[[], Tensor], param: Parameter,
                           step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of loss_fn with respect to one parameter."""
    grad = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        f_plus = loss_fn().item()
        flat[i] = orig - step
        f_minus = loss_fn().item()
        flat[i] = orig
        gflat[i] = (f_plus - f_minus) / (2.0 * step)
    return grad


def tape_gradients(loss_fn: Callable[[], Tensor],
                   params: Sequence[Parameter]) -> dict[str, np.ndarray]:
    """Run one taped forward/backward pass and return each parameter's grad."""
    for p in params:
        p.reset_grad()
    with Tape() as tape:
        loss = loss_fn()
        backward(loss, tape)
    return {p.name: p.grad.copy() for p in params}


def max_relative_error(loss_fn: Callable[[], Tensor], params: Sequence[Parameter],
                       step: float = 1e-5) -> float:
    """Worst-case mismatch between tape and finite-difference gradients.

    Per entry: |ad - fd| / max(1, |ad|, |fd|), i.e. absolute error for
    small gradients and relative error for large ones, so finite-
    difference noise near zero does not dominate.
    """
    analytic = tape_gradients(loss_fn, params)
    worst = 0.0
    for p in params:
        fd = finite_difference_grad(loss_fn, p, step=step)
        ad = analytic[p.name]
        denom = np.maximum(1.0, np.maximum(np.abs(ad), np.abs(fd)))
        err = np.abs(ad - fd) / denom
        if err.size:
            worst = max(worst, float(err.max()))
    for p in params:
        p.reset_grad()
    return worst
