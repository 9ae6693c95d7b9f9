# (C) 2026 pafi-hiwi contributors
# SPDX-License-Identifier: AGPL-3.0-or-later

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np
from numpy.typing import ArrayLike, NDArray

from pafi.bench.model import ToyModel
from pafi.bench.tasks import Split, TaskData
from pafi.errors import ConfigurationError, DimensionError
from pafi.log import get_logger
from pafi.stores import ParameterStore

log = get_logger()

METRICS = {"classification": "accuracy", "regression": "pearson"}


@dataclass(frozen=True)
class Metric:
    name: str
    value: float
    warning: str | None = None


def accuracy(predictions: ArrayLike, labels: ArrayLike) -> float:
    p, y = np.asarray(predictions), np.asarray(labels)
    if p.shape != y.shape or p.size == 0:
        raise DimensionError(f"accuracy: predictions {list(p.shape)} vs labels {list(y.shape)}")
    return float(np.mean(p == y))


def pearson(predictions: ArrayLike, labels: ArrayLike) -> Metric:
    """Pearson r; zero variance on either side yields 0 with a warning."""
    p = np.asarray(predictions, dtype=np.float64).reshape(-1)
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if p.shape != y.shape or p.size < 2:
        raise DimensionError(f"pearson: predictions {list(p.shape)} vs labels {list(y.shape)}")
    dp, dy = p - p.mean(), y - y.mean()
    denom = float(np.sqrt(np.dot(dp, dp) * np.dot(dy, dy)))
    if denom == 0.0:
        log.warning("pearson: zero-variance predictions or labels; reporting 0")
        return Metric("pearson", 0.0, warning="zero_variance")
    return Metric("pearson", float(np.dot(dp, dy) / denom))


def predict(model: ToyModel, split: Split, *, params: ParameterStore | None = None,
            batch_size: int = 256) -> NDArray[Any]:
    """Class ids for classification, scalar outputs for regression."""
    outs = [model.forward(b.tokens, params).data for b in split.batches(batch_size)]
    logits = np.concatenate(outs, axis=0)
    if model.task_kind == "classification":
        return np.argmax(logits, axis=1)
    return logits[:, 0]


def logits(model: ToyModel, split: Split, *, params: ParameterStore | None = None,
           batch_size: int = 256) -> NDArray[np.float64]:
    outs = [model.forward(b.tokens, params).data for b in split.batches(batch_size)]
    return np.concatenate(outs, axis=0)


def evaluate(model: ToyModel, task: TaskData | Split, *, kind: str | None = None,
             metric: str | None = None, params: ParameterStore | None = None) -> Metric:
    """Accuracy (classification) or Pearson r (regression) on the dev split."""
    split = task.dev if isinstance(task, TaskData) else task
    kind = kind or (task.kind if isinstance(task, TaskData) else model.task_kind)
    expected = METRICS.get(kind)
    if expected is None:
        raise ConfigurationError(f"unknown task kind {kind!r}")
    if metric is not None and metric != expected:
        raise ConfigurationError(f"metric {metric!r} does not apply to {kind} tasks (use {expected})")
    preds = predict(model, split, params=params)
    if kind == "classification":
        return Metric("accuracy", accuracy(preds, split.labels))
    return pearson(preds, split.labels)
