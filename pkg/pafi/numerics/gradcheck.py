# (C) 2026 pafi-hiwi contributors
# SPDX-License-Identifier: AGPL-3.0-or-later

from __future__ import annotations

from collections.abc import Callable

import numpy as np
from numpy.typing import ArrayLike

from pafi.errors import ConfigurationError
from pafi.numerics.tensor import Tensor, as_tensor


def _scalar(value: Tensor | float) -> float:
    return value.item() if isinstance(value, Tensor) else float(value)


def finite_difference(
    fn: Callable[[Tensor], Tensor | float],
    params: Tensor,
    step: float = 1e-5,
) -> Tensor:
    """Central-difference gradient estimate of a scalar function, one coordinate at a time."""
    if not step > 0:
        raise ConfigurationError(f"finite-difference step must be positive, got {step}")
    base = params.numpy().reshape(-1)
    grad = np.empty_like(base)
    for i in range(base.size):
        orig = base[i]
        base[i] = orig + step
        hi = _scalar(fn(Tensor(base.reshape(params.shape))))
        base[i] = orig - step
        lo = _scalar(fn(Tensor(base.reshape(params.shape))))
        base[i] = orig
        grad[i] = (hi - lo) / (2.0 * step)
    return Tensor(grad.reshape(params.shape))


def relative_error(a: Tensor | ArrayLike, b: Tensor | ArrayLike) -> float:
    """Norm-wise relative error ‖a − b‖ / max(‖a‖, ‖b‖, 1e-12)."""
    x = as_tensor(a).data
    y = as_tensor(b).data
    denom = max(float(np.linalg.norm(x)), float(np.linalg.norm(y)), 1e-12)
    return float(np.linalg.norm(x - y)) / denom
