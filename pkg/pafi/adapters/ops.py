# (C) 2026 pafi-hiwi contributors
# SPDX-License-Identifier: AGPL-3.0-or-later

"""
Adapter arithmetic. Every function here is written against pafi.numerics.ops,
so it runs eagerly on Tensors and records onto a graph when given Vars; the
merge used after training and the forward used during training are the same
code.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np
from numpy.typing import ArrayLike

from pafi.errors import DimensionError
from pafi.numerics import Tensor, Var, as_tensor, ops
from pafi.adapters.base import Bottleneck

Operand = Union[Tensor, Var]


def _operand(x: Operand | ArrayLike) -> Operand:
    return x if isinstance(x, (Tensor, Var)) else as_tensor(x)


def _as_rows(x: Operand) -> tuple[Operand, tuple[int, ...] | None]:
    """View a rank-1 operand as a single row; remember the shape to restore."""
    if len(x.shape) == 1:
        return ops.reshape(x, (1, x.shape[0])), x.shape
    if len(x.shape) != 2:
        raise DimensionError(f"adapter input must be rank 1 or 2, got shape {list(x.shape)}")
    return x, None


def _restore(x: Operand, shape: tuple[int, ...] | None) -> Operand:
    return x if shape is None else ops.reshape(x, shape)


def _weights(w: Bottleneck) -> Bottleneck:
    return Bottleneck(
        _operand(w.down), _operand(w.up),
        None if w.down_bias is None else _operand(w.down_bias),
        None if w.up_bias is None else _operand(w.up_bias),
    )


def bottleneck(x: Operand, w: Bottleneck, f: str) -> Operand:
    """f(x·W_down + b_down)·W_up + b_up over the last axis of a rank-2 x."""
    if x.shape[-1] != w.down.shape[0]:
        raise DimensionError(
            f"adapter: input width {x.shape[-1]} vs W_down {list(w.down.shape)}"
        )
    z = ops.matmul(x, w.down)
    if w.down_bias is not None:
        z = ops.bias_add(z, w.down_bias)
    z = ops.matmul(ops.nonlinearity(z, f), w.up)
    if w.up_bias is not None:
        z = ops.bias_add(z, w.up_bias)
    return z


def adapter_forward(h: Operand | ArrayLike, weights: Bottleneck, f: str) -> Operand:
    """Residual bottleneck: h + f(h·W_down + b_down)·W_up + b_up."""
    h, shape = _as_rows(_operand(h))
    out = ops.add(h, bottleneck(h, _weights(weights), f))
    return _restore(out, shape)


def lora_branch(h: Operand, weights: Bottleneck, scale: float) -> Operand:
    z = ops.matmul(ops.matmul(h, weights.down), weights.up)
    return z if scale == 1.0 else ops.scale(z, scale)


def lora_forward(h: Operand | ArrayLike, W: Operand | ArrayLike, weights: Bottleneck,
                 scale: float = 1.0) -> Operand:
    """Base projection plus the parallel low-rank branch: hW + s·h·W_down·W_up."""
    h, shape = _as_rows(_operand(h))
    W, w = _operand(W), _weights(weights)
    out = ops.add(ops.matmul(h, W), lora_branch(h, w, scale))
    return _restore(out, shape)


def lora_merge(W: Operand | ArrayLike, weights: Bottleneck, scale: float = 1.0) -> Operand:
    """W + s·W_down·W_up, the weight a plain projection uses after merging."""
    W, w = _operand(W), _weights(weights)
    if W.shape != (w.down.shape[0], w.up.shape[1]):
        raise DimensionError(
            f"lora merge: W {list(W.shape)} vs down {list(w.down.shape)} / up {list(w.up.shape)}"
        )
    delta = ops.matmul(w.down, w.up)
    return ops.add(W, delta if scale == 1.0 else ops.scale(delta, scale))


def hiwi_merge(P: Operand | ArrayLike, weights: Bottleneck, f: str) -> Operand:
    """
    P + ΔP for a HiWi target. A weight W (stored d_in × d_out) is updated as
    (Wᵀ + f(Wᵀ·W_down + b_down)·W_up + b_up)ᵀ, so W_down is d_in × r and
    multiplies along the input dimension; a bias is treated as one row.
    """
    P = _operand(P)
    if len(P.shape) == 2:
        rows = ops.transpose(P, (1, 0))
        out = ops.add(rows, bottleneck(rows, _weights(weights), f))
        return ops.transpose(out, (1, 0))
    P, shape = _as_rows(P)
    out = ops.add(P, bottleneck(P, _weights(weights), f))
    return _restore(out, shape)


def hiwi_weight_merge(W: Operand | ArrayLike, weights: Bottleneck, f: str) -> Operand:
    W = _operand(W)
    if len(W.shape) != 2:
        raise DimensionError(f"hiwi weight merge needs a matrix, got shape {list(W.shape)}")
    return hiwi_merge(W, weights, f)


def hiwi_bias_merge(b: Operand | ArrayLike, weights: Bottleneck, f: str) -> Operand:
    b = _operand(b)
    if len(b.shape) != 1:
        raise DimensionError(f"hiwi bias merge needs a vector, got shape {list(b.shape)}")
    return hiwi_merge(b, weights, f)


def rank_of(M: Tensor | ArrayLike, tol: float = 1e-8) -> int:
    """Numerical rank: singular values above tol·σ_max."""
    m = as_tensor(M).data
    if m.ndim != 2:
        raise DimensionError(f"rank_of needs a matrix, got shape {list(m.shape)}")
    s = np.linalg.svd(m, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.count_nonzero(s > tol * s[0]))


@dataclass(frozen=True)
class LoraGap:
    lhs: Tensor
    rhs: Tensor
    max_abs_gap: float


def demonstrate_lora_inequality(W: Tensor | ArrayLike, weights: Bottleneck,
                                h: Tensor | ArrayLike, f: str) -> LoraGap:
    """
    Compare hW + f(h·W_down)·W_up against h(W + f(W_down)·W_up). The two only
    coincide in general when f is linear, which is why a nonlinear LoRA
    branch cannot be merged.
    """
    hh, shape = _as_rows(as_tensor(h))
    W = as_tensor(W)
    down, up = as_tensor(weights.down), as_tensor(weights.up)
    lhs = ops.add(ops.matmul(hh, W), ops.matmul(ops.nonlinearity(ops.matmul(hh, down), f), up))
    rhs = ops.matmul(hh, ops.add(W, ops.matmul(ops.nonlinearity(down, f), up)))
    gap = float(np.max(np.abs(lhs.data - rhs.data)))
    return LoraGap(_restore(lhs, shape), _restore(rhs, shape), gap)
