# (C) 2026 pafi-hiwi contributors
# SPDX-License-Identifier: AGPL-3.0-or-later

import csv

import numpy as np
import pytest

from pafi.bench import (
    SyntheticTask,
    accuracy,
    build_model,
    dump_task_tsv,
    evaluate,
    init_params,
    majority_baseline,
    make_task,
    pearson,
    reinit_classifier,
)
from pafi.errors import ConfigurationError, DimensionError
from pafi.numerics import Tensor, finite_difference, relative_error

from utils import tiny_config, tiny_model, tiny_task


def test_init_is_seeded(config):
    assert init_params(config, 4).bit_equal(init_params(config, 4))
    assert not init_params(config, 4).bit_equal(init_params(config, 5))


def test_config_validation():
    with pytest.raises(ConfigurationError):
        tiny_config(heads=3)
    with pytest.raises(ConfigurationError):
        tiny_config(L=0)
    with pytest.raises(ConfigurationError):
        tiny_config(ffn_mult=2)


def test_norms_start_at_identity(theta):
    assert np.array_equal(theta["embeddings.norm.weight"].tensor.data, np.ones(4))
    assert not theta["encoder.layer.0.ffn_norm.bias"].tensor.data.any()


def test_reinit_classifier_touches_only_the_head(theta):
    fresh = reinit_classifier(theta, seed=3)
    for g in theta:
        same = g.tensor.bit_equal(fresh[g.name].tensor)
        assert same == (not g.name.startswith("classifier."))
    assert not fresh["classifier.bias"].tensor.data.any()


def test_forward_shapes_and_sequence_limit(task):
    model = tiny_model()
    logits = model.forward(task.dev.tokens[:5])
    assert logits.shape == (5, 2)
    with pytest.raises(DimensionError):
        model.forward(np.zeros((2, 9), dtype=np.int64))
    with pytest.raises(DimensionError):
        model.forward(np.zeros(4, dtype=np.int64))


def test_same_seed_same_task():
    a, b = tiny_task(seed=3), tiny_task(seed=3)
    assert np.array_equal(a.train.tokens, b.train.tokens)
    assert np.array_equal(a.dev.labels, b.dev.labels)
    assert not np.array_equal(tiny_task(seed=4).train.tokens, a.train.tokens)


def test_classification_rows_carry_their_trigger_pair():
    data = make_task(SyntheticTask(seed=1, train_size=64, dev_size=32, seq_len=8, V=30, classes=3))
    for tokens, label in zip(data.train.tokens, data.train.labels):
        assert tokens[0] == 0
        assert {1 + 2 * label, 2 + 2 * label} <= set(tokens.tolist())
        for other in range(3):
            if other != label:
                assert not {1 + 2 * other, 2 + 2 * other} <= set(tokens.tolist())


def test_dev_never_repeats_train():
    data = tiny_task(seed=2)
    train = {tuple(t) for t in data.train.tokens.tolist()}
    assert not any(tuple(t) in train for t in data.dev.tokens.tolist())


def test_task_validation():
    with pytest.raises(ConfigurationError):
        SyntheticTask(kind="ranking")
    with pytest.raises(ConfigurationError):
        SyntheticTask(V=5, classes=2)
    with pytest.raises(ConfigurationError):
        SyntheticTask(seq_len=3, distractors=1)
    with pytest.raises(ConfigurationError):
        make_task(SyntheticTask(V=6, classes=2, seq_len=3, distractors=0, train_size=500))


def test_majority_baseline_near_chance():
    data = make_task(SyntheticTask(seed=0, train_size=512, dev_size=512))
    assert abs(majority_baseline(data.dev) - 0.5) < 0.1


def test_metrics_hand_cases():
    assert accuracy([0, 1, 1], [0, 1, 1]) == 1.0
    assert pearson([1.0, 2.0, 3.0], [2.0, 4.0, 5.0]).value == pytest.approx(0.98198, abs=1e-5)
    labels = np.array([0.3, -1.2, 2.5, 0.0])
    assert pearson(3.0 * labels + 7.0, labels).value == pytest.approx(1.0)
    flat = pearson([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])
    assert flat.value == 0.0 and flat.warning == "zero_variance"
    with pytest.raises(DimensionError):
        accuracy([0, 1], [0])


def test_evaluate_picks_metric_by_task_kind(task):
    model = tiny_model()
    m = evaluate(model, task)
    assert m.name == "accuracy" and 0.0 <= m.value <= 1.0
    with pytest.raises(ConfigurationError):
        evaluate(model, task, metric="pearson")
    reg = tiny_task(kind="regression")
    reg_model = build_model(tiny_config(classes=1), 0, task_kind="regression")
    assert evaluate(reg_model, reg).name == "pearson"


def test_task_tsv(tmp_path, task):
    path = tmp_path / "task.tsv"
    dump_task_tsv(task, path)
    with path.open(encoding="utf-8") as fh:
        rows = list(csv.reader(fh, delimiter="\t"))
    assert rows[0] == ["split", "id", "label", "tokens"]
    assert len(rows) == 1 + len(task.train) + len(task.dev)
    first = rows[1]
    assert first[0] == "train" and int(first[2]) == task.train.labels[0]
    assert [int(t) for t in first[3].split()] == task.train.tokens[0].tolist()


@pytest.mark.parametrize(
    "seed", [0, 1, 2] + [pytest.param(s, marks=pytest.mark.slow) for s in range(3, 20)]
)
def test_backprop_matches_finite_differences_over_all_params(seed):
    data = tiny_task(seed=seed)
    model = tiny_model(seed=seed)
    tokens, labels = data.train.tokens[:4], data.train.labels[:4]
    _, grads = model.gradients(tokens, labels)
    manual, numeric = [], []
    for g in model.params:
        def loss_at(t: Tensor, name=g.name) -> float:
            return model.loss(tokens, labels, params=model.params.replace({name: t}))
        manual.append(grads[g.name].data.reshape(-1))
        numeric.append(finite_difference(loss_at, g.tensor).data.reshape(-1))
    assert relative_error(np.concatenate(manual), np.concatenate(numeric)) < 1e-4
