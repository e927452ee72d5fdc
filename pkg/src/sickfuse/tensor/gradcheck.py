"""Finite-difference gradient estimation, the verification oracle."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


def finite_difference_gradient(f, x: Tensor, step: float = 1e-5) -> Tensor:
    """Central-difference estimate of d f / d x, one coordinate at a time.

    `f` maps a Tensor to a scalar (float or 0-d Tensor). Double precision
    input is assumed; the estimate degrades badly in float32.
    """
    base = np.array(x.data, dtype=np.float64)
    grad = np.zeros_like(base)
    flat = base.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = _scalar(f(Tensor(base, checked=False)))
        flat[i] = orig - step
        lo = _scalar(f(Tensor(base, checked=False)))
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * step)
    return Tensor(grad, checked=False)


def _scalar(v) -> float:
    if isinstance(v, Tensor):
        return v.item()
    return float(v)


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |a-n| / max(1, |a|, |n|), elementwise.

    The unit floor keeps near-zero coordinates from inflating the ratio past
    the finite-difference noise floor.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0
