# (C) 2026 pafi-hiwi contributors
# SPDX-License-Identifier: AGPL-3.0-or-later

from __future__ import annotations

from collections.abc import Iterable, Mapping
from itertools import islice
from typing import Any, Protocol

import numpy as np

from pafi.errors import ConfigurationError, ContractError, NumericError
from pafi.log import get_logger
from pafi.numerics import Tensor
from pafi.stores import ParameterStore, ParamGroup

log = get_logger()


class GradientSource(Protocol):
    """Anything with parameters and per-sample gradients of its loss."""

    params: ParameterStore

    def sample_gradients(self, sample: Any) -> Mapping[str, Tensor]: ...


def fisher_scores(model: GradientSource, data: Iterable[Any], n: int) -> ParameterStore:
    """
    Empirical Fisher diagonal: the mean over the first n samples of the
    elementwise squared per-sample gradient, shaped like model.params.

    Per-sample squares are reduced after sorting along the sample axis, so the
    result does not depend on sample order, bit for bit.
    """
    if n < 1:
        raise ConfigurationError(f"fisher sample count must be at least 1, got {n}")
    store = model.params
    squares: dict[str, list[np.ndarray]] = {g.name: [] for g in store}
    seen = 0
    for i, sample in enumerate(islice(data, n)):
        try:
            grads = model.sample_gradients(sample)
        except NumericError as e:
            raise NumericError(f"sample {i}: {e.message}") from None
        for g in store:
            grad = grads.get(g.name)
            if grad is None:
                squares[g.name].append(np.zeros(g.shape))
                continue
            arr = grad.data
            if not np.isfinite(arr).all():
                raise NumericError(f"sample {i}: non-finite gradient for {g.name}")
            squares[g.name].append(arr * arr)
        seen += 1
    if seen == 0:
        raise ContractError("fisher_scores got no samples")
    if seen < n:
        log.warning(f"fisher_scores: asked for {n} samples, data held {seen}")

    def mean_sq(g: ParamGroup) -> Tensor:
        stacked = np.sort(np.stack(squares[g.name]), axis=0)
        return Tensor._adopt(stacked.sum(axis=0) / seen)

    return ParameterStore(ParamGroup(g.name, g.role, mean_sq(g)) for g in store)
