# (C) 2026 pafi-hiwi contributors
# SPDX-License-Identifier: AGPL-3.0-or-later

"""
Masked optimizers. State is kept per selected coordinate only, so nothing
outside the mask is ever read back into the parameters.
"""

from __future__ import annotations

import math
from collections.abc import Mapping
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from pafi import metrics
from pafi.errors import AlignmentError, ConfigurationError, NumericError
from pafi.masks import SparseMask
from pafi.numerics import Tensor
from pafi.stores import ParameterStore

OPTIMIZERS = ("sgd", "adam")


@dataclass
class OptimizerState:
    kind: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, NDArray[np.float64]] = field(default_factory=dict)
    v: dict[str, NDArray[np.float64]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in OPTIMIZERS:
            raise ConfigurationError(
                f"unknown optimizer {self.kind!r}; expected one of {', '.join(OPTIMIZERS)}"
            )
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0 and self.eps > 0.0):
            raise ConfigurationError("adam needs 0 <= beta1, beta2 < 1 and eps > 0")

    @property
    def allocated(self) -> int:
        """Number of coordinates carrying moment state."""
        return sum(a.size for a in self.m.values())


def _masked_grads(params: ParameterStore, grads: Mapping[str, Tensor],
                  mask: SparseMask) -> dict[str, tuple[NDArray[np.int64], NDArray[np.float64]]]:
    mask.check_against(params)
    out: dict[str, tuple[NDArray[np.int64], NDArray[np.float64]]] = {}
    missing: list[str] = []
    for mg in mask:
        if not mg.count:
            continue
        g = grads.get(mg.name)
        if g is None or g.shape != params[mg.name].shape:
            missing.append(mg.name)
            continue
        idx = mg.indices.astype(np.int64)
        sel = g.flat()[idx]
        if not np.isfinite(sel).all():
            raise NumericError(f"non-finite gradient in masked coordinates of {mg.name}")
        out[mg.name] = (idx, sel)
    if missing:
        raise AlignmentError("gradients missing or misshapen for masked groups", missing)
    return out


def masked_step(params: ParameterStore, grads: Mapping[str, Tensor], mask: SparseMask,
                lr: float, state: OptimizerState, *,
                clip: float | None = None) -> ParameterStore:
    """
    One optimizer step restricted to the mask. Coordinates outside the mask
    are copied through untouched; Adam moments exist only for masked ones.
    """
    if not lr > 0:
        raise ConfigurationError(f"learning rate must be positive, got {lr}")
    picked = _masked_grads(params, grads, mask)

    if clip is not None:
        norm = math.sqrt(sum(float(np.dot(g, g)) for _, g in picked.values()))
        if norm > clip:
            factor = clip / norm
            picked = {k: (idx, g * factor) for k, (idx, g) in picked.items()}

    if state.kind == "adam":
        state.t += 1
        c1 = 1.0 - state.beta1 ** state.t
        c2 = 1.0 - state.beta2 ** state.t

    updates: dict[str, Tensor] = {}
    touched = 0
    for name, (idx, g) in picked.items():
        flat = params[name].tensor.numpy().reshape(-1)
        if state.kind == "sgd":
            flat[idx] = flat[idx] - lr * g
        else:
            m = state.m.get(name)
            v = state.v.get(name)
            if m is None:
                m = np.zeros_like(g)
                v = np.zeros_like(g)
            m = state.beta1 * m + (1.0 - state.beta1) * g
            v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
            state.m[name], state.v[name] = m, v
            flat[idx] = flat[idx] - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        updates[name] = Tensor._adopt(flat.reshape(params[name].shape))
        touched += idx.size
    metrics.inc("masked_updates_total", touched)
    return params.replace(updates)
