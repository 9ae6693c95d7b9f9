# (C) 2026 pafi-hiwi contributors
# SPDX-License-Identifier: AGPL-3.0-or-later

from .model import (
    ForwardHooks,
    ToyModel,
    ToyModelConfig,
    build_model,
    encode,
    init_params,
    reinit_classifier,
)
from .tasks import SyntheticTask, Split, TaskData, dump_task_tsv, majority_baseline, make_task
from .evaluate import Metric, accuracy, evaluate, logits, pearson, predict

__all__ = [
    "ForwardHooks",
    "Metric",
    "Split",
    "SyntheticTask",
    "TaskData",
    "ToyModel",
    "ToyModelConfig",
    "accuracy",
    "build_model",
    "dump_task_tsv",
    "encode",
    "evaluate",
    "init_params",
    "logits",
    "majority_baseline",
    "make_task",
    "pearson",
    "predict",
    "reinit_classifier",
]
