# (C) 2026 pafi-hiwi contributors
# SPDX-License-Identifier: AGPL-3.0-or-later

"""
Seeded synthetic tasks.

Classification: token 0 opens every sequence (the position the classifier
reads). Class c owns a trigger pair (1 + 2c, 2 + 2c); a class-c sequence
contains both of its triggers plus `distractors` single triggers drawn from
other classes, so the label depends on which pair co-occurs rather than on
any one token. The rest is filler from the non-trigger vocabulary.

Regression: the target is the mean of a hidden per-token weight over the
sequence plus Gaussian noise.
"""

from __future__ import annotations

import csv
from collections.abc import Iterator
from dataclasses import dataclass, asdict, field
from pathlib import Path
from typing import Any

import numpy as np
from numpy.typing import NDArray

from pafi.errors import ConfigurationError
from pafi.log import get_logger

log = get_logger()

CLS_TOKEN = 0
KINDS = ("classification", "regression")


@dataclass(frozen=True)
class SyntheticTask:
    kind: str = "classification"
    seed: int = 0
    train_size: int = 512
    dev_size: int = 256
    seq_len: int = 8
    classes: int = 2
    V: int = 50
    distractors: int = 1
    noise: float = 0.1

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown task kind {self.kind!r}; expected one of {', '.join(KINDS)}")
        if self.train_size < 1 or self.dev_size < 1:
            raise ConfigurationError("train_size and dev_size must be positive")
        if self.kind == "classification":
            if self.classes < 2:
                raise ConfigurationError("classification needs at least 2 classes")
            if self.V < 2 * self.classes + 2:
                raise ConfigurationError(
                    f"V={self.V} leaves no filler tokens for {self.classes} trigger pairs"
                )
            if self.seq_len < 3 + self.distractors:
                raise ConfigurationError(
                    f"seq_len={self.seq_len} cannot hold CLS, a trigger pair and {self.distractors} distractors"
                )
        elif self.seq_len < 2:
            raise ConfigurationError("seq_len must be at least 2")

    @property
    def out_dim(self) -> int:
        """Classifier width a model needs for this task."""
        return self.classes if self.kind == "classification" else 1

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_cfg(cls, section: dict[str, Any], *, V: int, classes: int) -> "SyntheticTask":
        keys = ("kind", "seed", "train_size", "dev_size", "seq_len", "distractors", "noise")
        return cls(**{k: section[k] for k in keys if k in section}, V=V, classes=classes)


@dataclass(frozen=True)
class Split:
    tokens: NDArray[np.int64]
    labels: NDArray[Any]

    def __len__(self) -> int:
        return int(self.tokens.shape[0])

    def batches(self, batch_size: int,
                rng: np.random.Generator | None = None) -> Iterator["Split"]:
        """Mini-batches in order, or in a seeded shuffled order when rng is given."""
        order = np.arange(len(self)) if rng is None else rng.permutation(len(self))
        for start in range(0, len(self), batch_size):
            idx = order[start:start + batch_size]
            yield Split(self.tokens[idx], self.labels[idx])

    def samples(self) -> Iterator["Split"]:
        return self.batches(1)


@dataclass(frozen=True)
class TaskData:
    spec: SyntheticTask
    train: Split
    dev: Split
    extras: dict[str, Any] = field(default_factory=dict)

    @property
    def kind(self) -> str:
        return self.spec.kind


def _classification_row(rng: np.random.Generator, spec: SyntheticTask, label: int) -> list[int]:
    C, s = spec.classes, spec.seq_len
    triggers = [1 + 2 * label, 2 + 2 * label]
    # one trigger per foreign class at most (repeats allowed), so no distractor
    # completes another class's pair
    picked: list[int] = []
    for c in rng.permutation([c for c in range(C) if c != label]):
        if len(picked) == spec.distractors:
            break
        picked.append(1 + 2 * int(c) + int(rng.integers(2)))
    while len(picked) < spec.distractors:
        picked.append(int(rng.choice(picked)))
    body = triggers + picked
    filler = rng.integers(2 * C + 1, spec.V, size=s - 1 - len(body)).tolist()
    body += filler
    return [CLS_TOKEN] + [body[i] for i in rng.permutation(len(body))]


def _unique_rows(rng: np.random.Generator, n: int, make, seen: set[tuple[int, ...]],
                 what: str) -> list[tuple[Any, list[int]]]:
    rows: list[tuple[Any, list[int]]] = []
    attempts = 0
    while len(rows) < n:
        attempts += 1
        if attempts > 50 * n + 1000:
            raise ConfigurationError(f"cannot draw {n} distinct {what} sequences; enlarge V or seq_len")
        row = make()
        key = tuple(row[1])
        if key in seen:
            continue
        seen.add(key)
        rows.append(row)
    return rows


def make_task(spec: SyntheticTask) -> TaskData:
    """Generate train and dev splits; dev never repeats a train sequence."""
    rng = np.random.default_rng(spec.seed)
    seen: set[tuple[int, ...]] = set()
    extras: dict[str, Any] = {}

    if spec.kind == "classification":
        def make():
            label = int(rng.integers(spec.classes))
            return label, _classification_row(rng, spec, label)
    else:
        weights = rng.normal(0.0, 1.0, size=spec.V)
        extras["token_weights"] = weights

        def make():
            toks = [CLS_TOKEN] + rng.integers(1, spec.V, size=spec.seq_len - 1).tolist()
            y = float(weights[toks].mean() + spec.noise * rng.normal())
            return y, toks

    splits = []
    for size, what in ((spec.train_size, "train"), (spec.dev_size, "dev")):
        rows = _unique_rows(rng, size, make, seen, what)
        tokens = np.array([r[1] for r in rows], dtype=np.int64)
        dtype = np.int64 if spec.kind == "classification" else np.float64
        labels = np.array([r[0] for r in rows], dtype=dtype)
        splits.append(Split(tokens, labels))
    log.debug(f"generated {spec.kind} task seed={spec.seed}: {spec.train_size} train / {spec.dev_size} dev")
    return TaskData(spec, splits[0], splits[1], extras)


def majority_baseline(split: Split) -> float:
    """Accuracy of always predicting the most frequent label."""
    _, counts = np.unique(split.labels, return_counts=True)
    return float(counts.max() / len(split))


def dump_task_tsv(task: TaskData, path: str | Path) -> None:
    """One row per example: split, id, label, space-separated tokens."""
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with p.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["split", "id", "label", "tokens"])
        for name, split in (("train", task.train), ("dev", task.dev)):
            for i in range(len(split)):
                label = split.labels[i]
                label_s = str(int(label)) if task.kind == "classification" else repr(float(label))
                w.writerow([name, i, label_s, " ".join(str(int(t)) for t in split.tokens[i])])
