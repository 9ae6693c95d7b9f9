# (C) 2026 pafi-hiwi contributors
# SPDX-License-Identifier: AGPL-3.0-or-later

"""
Masked fine-tuning.

Every mode trains φ = θ ∪ δ under one mask: the mode decides which θ
coordinates are selected (all, none, norms, biases, or an explicit sparse
mask), δ groups of an adapter are selected in full, and the task classifier
is always trainable. Gradients are computed for every group that has at
least one selected coordinate and then restricted to the mask.
"""

from __future__ import annotations

import math
import time
from collections.abc import Iterable
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any

import numpy as np

from pafi import metrics
from pafi.adapters import AdapterSpec, AdapterWeights, build_adapter, theta_groups
from pafi.bench import Metric, TaskData, ToyModel, evaluate, reinit_classifier
from pafi.errors import (
    ConfigurationError,
    FrozenViolationError,
    NumericError,
    TrainingError,
)
from pafi.log import ReportWriter, get_logger
from pafi.masks import SparseMask, mode_mask
from pafi.optim import OPTIMIZERS, OptimizerState, masked_step
from pafi.schemas import EpochRecord, TrainSummary
from pafi.stores import ParameterStore, Role, check_aligned

log = get_logger()

SCHEDULES = ("constant", "linear")


class Mode(str, Enum):
    FULL_FT = "full_ft"
    LINEAR_FT = "linear_ft"
    LINEAR_FT_NORM = "linear_ft_norm"
    BITFIT = "bitfit"
    PAFI = "pafi"
    ADAPTER = "adapter"


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-2
    batch_size: int = 32
    epochs: int = 20
    seed: int = 0
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_clip: float | None = None
    schedule: str = "constant"
    mode: Mode = Mode.FULL_FT
    mask: SparseMask | None = field(default=None, compare=False, repr=False)
    adapter: AdapterSpec | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", Mode(self.mode))
        if not self.learning_rate > 0:
            raise ConfigurationError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.epochs < 0:
            raise ConfigurationError(f"epochs must be non-negative, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be positive, got {self.batch_size}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigurationError(f"unknown optimizer {self.optimizer!r}")
        if self.schedule not in SCHEDULES:
            raise ConfigurationError(f"unknown schedule {self.schedule!r}")
        if self.grad_clip is not None and not self.grad_clip > 0:
            raise ConfigurationError("grad_clip must be positive when set")
        if self.mode is Mode.PAFI and self.mask is None:
            raise ConfigurationError("pafi mode needs a mask")
        if self.mode is not Mode.PAFI and self.mask is not None:
            raise ConfigurationError(f"{self.mode.value} mode does not take a mask")
        if self.mode is Mode.ADAPTER and self.adapter is None:
            raise ConfigurationError("adapter mode needs an adapter spec")
        if self.mode is not Mode.ADAPTER and self.adapter is not None:
            raise ConfigurationError(f"{self.mode.value} mode does not take an adapter spec")

    @classmethod
    def from_cfg(cls, section: dict[str, Any], **overrides: Any) -> "TrainConfig":
        keys = ("learning_rate", "batch_size", "epochs", "seed", "optimizer",
                "beta1", "beta2", "eps", "grad_clip", "schedule")
        kwargs = {k: section[k] for k in keys if section.get(k) is not None}
        kwargs.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**kwargs)

    def optimizer_state(self) -> OptimizerState:
        return OptimizerState(self.optimizer, self.beta1, self.beta2, self.eps)

    def lr_at(self, step: int, total: int) -> float:
        if self.schedule == "linear" and total > 0:
            return self.learning_rate * max(1.0 - step / total, 1.0 / total)
        return self.learning_rate


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    loss: float
    metric: Metric
    lr: float
    steps: int


@dataclass
class TrainReport:
    mode: str
    epochs: list[EpochStats]
    final_metric: Metric
    wall_clock: float
    updated_params: int
    trainable_params: int
    frozen_violations: int
    steps: int
    adapter_kind: str | None = None

    @property
    def losses(self) -> list[float]:
        return [e.loss for e in self.epochs]

    def epoch_records(self) -> list[EpochRecord]:
        return [
            EpochRecord(epoch=e.epoch, loss=e.loss, metric=e.metric.name,
                        value=e.metric.value, lr=e.lr, steps=e.steps)
            for e in self.epochs
        ]

    def summary(self, checkpoint_sha256: str) -> TrainSummary:
        return TrainSummary(
            mode=self.mode, adapter_kind=self.adapter_kind, epochs=len(self.epochs),
            steps=self.steps, final_loss=self.losses[-1] if self.epochs else None,
            metric=self.final_metric.name, value=self.final_metric.value,
            warning=self.final_metric.warning, updated_params=self.updated_params,
            trainable_params=self.trainable_params,
            frozen_violations=self.frozen_violations,
            checkpoint_sha256=checkpoint_sha256,
        )


@dataclass
class TrainResult:
    report: TrainReport
    params: ParameterStore
    adapter: AdapterWeights | None
    phi: ParameterStore
    mask: SparseMask


def verify_frozen(theta0: ParameterStore, theta2: ParameterStore, mask: SparseMask, *,
                  ignore: Iterable[Role] = (Role.CLASSIFIER,)) -> int:
    """
    Unmasked coordinates whose bytes differ between θ0 and θ2. Groups with
    an ignored role (the new task head by default) are not counted.
    """
    check_aligned(theta0, theta2)
    mask.check_against(theta0)
    skip = set(ignore)
    violations = 0
    for g in theta0:
        if g.role in skip:
            continue
        a = g.tensor.flat().view(np.uint64)
        b = theta2[g.name].tensor.flat().view(np.uint64)
        changed = a != b
        violations += int(np.count_nonzero(changed & ~mask.as_dense(g.name)))
    return violations


def training_mask(theta: ParameterStore, config: TrainConfig,
                  delta: AdapterWeights | None) -> tuple[ParameterStore, SparseMask]:
    """(φ, mask over φ) for a mode."""
    if config.mode is Mode.PAFI:
        base = config.mask
        base.check_against(theta)
        base.check_provenance(theta)
    elif config.mode is Mode.ADAPTER:
        names = theta_groups(config.adapter, theta)
        base = SparseMask.from_indices(
            theta, {n: np.arange(theta[n].size, dtype=np.uint64) for n in names},
            selector="role",
        )
    else:
        base = mode_mask(theta, config.mode.value)
    head = SparseMask.from_indices(
        theta,
        {g.name: np.arange(g.size, dtype=np.uint64) for g in theta.by_role(Role.CLASSIFIER)},
        provenance=base.provenance,
    )
    mask = base.union(head)
    phi = theta
    if delta is not None:
        dstore = delta.to_store()
        phi = theta.union(dstore)
        mask = mask.union(SparseMask.full(dstore, provenance=base.provenance))
    return phi, mask


def train(model: ToyModel, task: TaskData, config: TrainConfig, *,
          report: ReportWriter | None = None) -> TrainResult:
    """Run a deterministic masked fine-tuning job; θ0 is model.params."""
    t0 = time.perf_counter()
    theta0 = model.params
    if theta0.by_role(Role.ADAPTER):
        raise ConfigurationError("model.params must be a plain checkpoint without adapter groups")
    delta0 = build_adapter(config.adapter, theta0, config.seed) if config.adapter else None
    phi0, mask = training_mask(theta0, config, delta0)
    trainable = mask.selected_groups()
    run_model = ToyModel(model.config, phi0, task_kind=task.kind, adapter=config.adapter)

    n_batches = math.ceil(len(task.train) / config.batch_size)
    total = config.epochs * n_batches
    state = config.optimizer_state()
    rng = np.random.default_rng(config.seed)
    phi = phi0
    step = 0
    history: list[EpochStats] = []
    metrics.inc("runs_total")
    log.info(
        f"train {config.mode.value}"
        + (f"/{config.adapter.kind.value} r={config.adapter.r}" if config.adapter else "")
        + f": {mask.total_selected} trainable coordinates, {config.epochs} epochs × {n_batches} steps"
    )

    for epoch in range(1, config.epochs + 1):
        losses: list[float] = []
        lr = config.lr_at(step, total)
        for batch in task.train.batches(config.batch_size, rng):
            lr = config.lr_at(step, total)
            try:
                loss, grads = run_model.gradients(
                    batch.tokens, batch.labels, params=phi, trainable=trainable
                )
                metrics.inc("backward_passes_total")
                phi = masked_step(phi, grads, mask, lr, state, clip=config.grad_clip)
            except NumericError as e:
                raise TrainingError(f"training diverged in epoch {epoch}: {e.message}",
                                    epoch=epoch) from None
            losses.append(loss)
            step += 1
            metrics.inc("steps_total")
        epoch_loss = float(np.mean(losses))
        if not math.isfinite(epoch_loss):
            raise TrainingError(f"training diverged in epoch {epoch}", epoch=epoch)
        metric = evaluate(run_model, task, params=phi)
        history.append(EpochStats(epoch, epoch_loss, metric, lr, step))
        metrics.inc("epochs_total")
        log.debug(f"epoch {epoch}: loss={epoch_loss:.6f} {metric.name}={metric.value:.4f}")
        if report is not None:
            rec = history[-1]
            report.write(EpochRecord(
                epoch=rec.epoch, loss=rec.loss, metric=metric.name,
                value=metric.value, lr=rec.lr, steps=rec.steps,
            ).model_dump(exclude_none=True))

    violations = verify_frozen(phi0, phi, mask)
    if violations:
        raise FrozenViolationError(violations)

    final = history[-1].metric if history else evaluate(run_model, task, params=phi)
    delta = AdapterWeights.from_store(config.adapter, phi) if config.adapter else None
    theta = phi.without(Role.ADAPTER) if delta is not None else phi
    updated = sum(
        int(np.count_nonzero(g.tensor.flat().view(np.uint64)
                             != phi[g.name].tensor.flat().view(np.uint64)))
        for g in phi0 if g.role is not Role.CLASSIFIER
    )
    trainable_params = sum(
        mg.count for mg in mask if phi0[mg.name].role is not Role.CLASSIFIER
    )
    rep = TrainReport(
        mode=config.mode.value, epochs=history, final_metric=final,
        wall_clock=time.perf_counter() - t0, updated_params=updated,
        trainable_params=trainable_params, frozen_violations=violations, steps=step,
        adapter_kind=config.adapter.kind.value if config.adapter else None,
    )
    log.info(f"done: {final.name}={final.value:.4f}, {updated} coordinates moved")
    return TrainResult(rep, theta, delta, phi, mask)


def pretrain(model: ToyModel, task: TaskData, config: TrainConfig, *,
             head_seed: int | None = None) -> ParameterStore:
    """
    Full fine-tuning on an auxiliary task, then a fresh classifier: a
    non-random θ0 for downstream runs.
    """
    cfg = replace(config, mode=Mode.FULL_FT, mask=None, adapter=None)
    result = train(model, task, cfg)
    seed = config.seed + 1 if head_seed is None else head_seed
    return reinit_classifier(result.params, seed)
