"""Central-difference gradient checking."""

from __future__ import annotations

from typing import Callable

import numpy as np

from ..errors import NumericError
from .tensor import Tensor, grad


def numerical_gradient(f: Callable[[Tensor], Tensor], point: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    x = np.array(point, dtype=np.float64)
    out = np.zeros_like(x)
    flat, gflat = x.reshape(-1), out.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = f(Tensor(x.copy())).item()
        flat[i] = orig - eps
        down = f(Tensor(x.copy())).item()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * eps)
    return out


def check_gradients(f: Callable[[Tensor], Tensor], point, eps: float = 1e-5) -> float:
    """Max over coordinates of |analytic - numeric| / max(1, |analytic|).

    ``f`` maps a tensor shaped like ``point`` to a scalar tensor. Evaluation
    happens at float64 regardless of ``point``'s dtype.
    """
    x = Tensor(np.array(point, dtype=np.float64), requires_grad=True)
    (analytic,) = grad(f(x), [x])
    numeric = numerical_gradient(f, x.data, eps)
    if not np.all(np.isfinite(numeric)):
        raise NumericError("non-finite value during finite differencing")
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic)), initial=0.0))
