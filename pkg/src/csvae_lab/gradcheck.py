"""Central finite-difference oracle for the reverse-mode engine.

The numeric side never touches the recorded graph: it re-evaluates the
function at perturbed inputs, so it stays an independent check on every
analytic gradient in the package.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor

DEFAULT_STEP = 1e-3
DEFAULT_RTOL = 1e-4
DEFAULT_ATOL = 1e-6


def numeric_gradient(f: Callable[[], Tensor], param: Tensor, step: float = DEFAULT_STEP) -> np.ndarray:
    """Central differences of the scalar f() w.r.t. every entry of param."""
    grad = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = f().item()
        flat[i] = orig - step
        lo = f().item()
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * step)
    return grad


def max_gradient_error(f: Callable[[], Tensor], params: Sequence[Tensor],
                       step: float = DEFAULT_STEP) -> float:
    """Worst relative error between analytic and numeric gradients.

    Entries where both gradients are below DEFAULT_ATOL in magnitude count
    as exact. Returns the max over all entries of all params.
    """
    for p in params:
        p.zero_grad()
    f().backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    worst = 0.0
    for p, a in zip(params, analytic):
        n = numeric_gradient(f, p, step=step)
        diff = np.abs(a - n)
        scale = np.maximum(np.abs(a), np.abs(n))
        rel = np.where(diff <= DEFAULT_ATOL, 0.0, diff / np.maximum(scale, 1e-300))
        worst = max(worst, float(rel.max()) if rel.size else 0.0)
    return worst


def assert_gradients_match(f: Callable[[], Tensor], params: Sequence[Tensor],
                           step: float = DEFAULT_STEP, rtol: float = DEFAULT_RTOL) -> float:
    err = max_gradient_error(f, params, step=step)
    if err >= rtol:
        raise AssertionError(f"gradient check failed: max relative error {err:.3e} >= {rtol:.0e}")
    return err
