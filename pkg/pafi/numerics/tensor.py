# (C) 2026 pafi-hiwi contributors
# SPDX-License-Identifier: AGPL-3.0-or-later

from __future__ import annotations

from collections.abc import Sequence
from typing import Any

import numpy as np
from numpy.typing import ArrayLike, NDArray

from pafi.errors import DimensionError, NumericError

_allow_nonfinite: bool | None = None


def allow_nonfinite(flag: bool | None = None) -> bool:
    """
    Read (or, with an argument, override) the debug switch that lets
    NaN/Inf through Tensor construction. Defaults to numerics.allow_nonfinite.
    """
    global _allow_nonfinite
    if flag is not None:
        _allow_nonfinite = bool(flag)
    if _allow_nonfinite is None:
        from pafi.config import get_cfg
        _allow_nonfinite = bool(get_cfg().get("numerics.allow_nonfinite"))
    return _allow_nonfinite


class Tensor:
    """
    Immutable dense float64 array, row-major.

    The backing ndarray is flagged read-only; every operation returns a new
    Tensor. Rank 0 is allowed for scalars (losses).
    """

    __slots__ = ("_data",)

    def __init__(self, data: ArrayLike, *, allow_nonfinite: bool | None = None):
        arr = np.array(data, dtype=np.float64, order="C", copy=True)
        self._data = _validated(arr, allow_nonfinite)

    @classmethod
    def _adopt(cls, arr: NDArray[np.float64]) -> "Tensor":
        """Wrap a freshly computed array without copying it."""
        out = cls.__new__(cls)
        arr = np.ascontiguousarray(arr, dtype=np.float64)
        out._data = _validated(arr, None)
        return out

    @classmethod
    def zeros(cls, shape: Sequence[int]) -> "Tensor":
        return cls._adopt(np.zeros(tuple(shape), dtype=np.float64))

    @property
    def shape(self) -> tuple[int, ...]:
        return self._data.shape

    @property
    def ndim(self) -> int:
        return self._data.ndim

    @property
    def size(self) -> int:
        return int(self._data.size)

    @property
    def data(self) -> NDArray[np.float64]:
        """Read-only view of the payload."""
        return self._data

    def numpy(self) -> NDArray[np.float64]:
        """Writable copy of the payload."""
        return self._data.copy()

    def flat(self) -> NDArray[np.float64]:
        return self._data.reshape(-1)

    def item(self) -> float:
        if self._data.size != 1:
            raise DimensionError(f"item() on tensor of shape {self.shape}")
        return float(self._data.reshape(-1)[0])

    def tobytes(self) -> bytes:
        return self._data.tobytes()

    def bit_equal(self, other: "Tensor") -> bool:
        return self.shape == other.shape and self.tobytes() == other.tobytes()

    def __array__(self, dtype: Any = None, copy: Any = None):
        return self._data if dtype is None else self._data.astype(dtype)

    def __repr__(self) -> str:
        return f"Tensor(shape={list(self.shape)}, data={self._data.tolist()!r})"

    # Tensors flow through the graph as values; arithmetic lives in pafi.numerics.ops
    # so that recorded and eager evaluation share one implementation.
    def __matmul__(self, other):
        from pafi.numerics.ops import matmul
        return matmul(self, other)

    def __add__(self, other):
        from pafi.numerics.ops import add
        return add(self, other)

    def __sub__(self, other):
        from pafi.numerics.ops import sub
        return sub(self, other)

    def __mul__(self, other):
        from pafi.numerics.ops import mul, scale
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)


def _validated(arr: NDArray[np.float64], allow: bool | None) -> NDArray[np.float64]:
    if any(dim <= 0 for dim in arr.shape):
        raise DimensionError(f"tensor dimensions must be positive, got {list(arr.shape)}")
    if allow is None:
        allow = allow_nonfinite()
    if not allow and not np.isfinite(arr).all():
        bad = int(np.flatnonzero(~np.isfinite(arr.reshape(-1)))[0])
        raise NumericError(f"non-finite value at flat index {bad} in tensor {list(arr.shape)}")
    arr.setflags(write=False)
    return arr


def as_tensor(x: "Tensor | ArrayLike") -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)
