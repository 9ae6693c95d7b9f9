# (C) 2026 pafi-hiwi contributors
# SPDX-License-Identifier: AGPL-3.0-or-later

"""Pydantic records for everything the toolkit writes to disk."""

import json
from typing import Any, Literal

from pydantic import BaseModel


def dump_json(record: BaseModel, *, indent: int | None = None) -> str:
    """Key-sorted JSON so identical records give identical bytes."""
    return json.dumps(
        record.model_dump(mode="json", exclude_none=True),
        sort_keys=True, indent=indent,
        separators=None if indent else (",", ":"),
    )


class ErrorRecord(BaseModel):
    """Error envelope printed by the CLI."""
    ok: Literal[False] = False
    code: str
    error: str
    exit_code: int


class EpochRecord(BaseModel):
    """One line of a training report."""
    type: Literal["epoch"] = "epoch"
    epoch: int
    loss: float
    metric: str
    value: float
    lr: float
    steps: int


class TrainSummary(BaseModel):
    """Closing line of a training report."""
    type: Literal["summary"] = "summary"
    mode: str
    adapter_kind: str | None = None
    epochs: int
    steps: int
    final_loss: float | None = None
    metric: str
    value: float
    warning: str | None = None
    updated_params: int
    trainable_params: int
    frozen_violations: int
    checkpoint_sha256: str


class EvalRecord(BaseModel):
    checkpoint: str
    checkpoint_sha256: str
    task_kind: str
    metric: str
    value: float
    warning: str | None = None
    examples: int


class CountRow(BaseModel):
    method: str
    tuned: int
    stored: int
    tuned_pct: float
    stored_pct: float


class RunManifest(BaseModel):
    """
    Everything needed to replay a command: the exact argv, the resolved
    config, input/output digests. Wall-clock data lives only here.
    """
    command: str
    argv: list[str]
    version: str
    seed: int | None = None
    config: dict[str, Any]
    inputs: dict[str, str] = {}
    outputs: dict[str, str] = {}
    wall_clock_s: float | None = None
    counters: dict[str, Any] = {}
