# (C) 2026 pafi-hiwi contributors
# SPDX-License-Identifier: AGPL-3.0-or-later

import json
from pathlib import Path

import numpy as np

from pafi.adapters import Bottleneck
from pafi.bench import SyntheticTask, ToyModel, ToyModelConfig, init_params, make_task
from pafi.numerics import Tensor
from pafi.stores import ParameterStore, ParamGroup, Role


def tiny_config(**kw) -> ToyModelConfig:
    """Smallest encoder that still exercises every group kind."""
    base = dict(V=20, n=8, d=4, L=1, heads=2, classes=2)
    base.update(kw)
    return ToyModelConfig(**base)


def tiny_store(config: ToyModelConfig | None = None, seed: int = 0) -> ParameterStore:
    return init_params(config or tiny_config(), seed)


def tiny_task(seed: int = 0, kind: str = "classification", **kw):
    spec = dict(kind=kind, seed=seed, train_size=48, dev_size=24, seq_len=6,
                classes=2 if kind == "classification" else 1, V=20)
    spec.update(kw)
    return make_task(SyntheticTask(**spec))


def tiny_model(config: ToyModelConfig | None = None, seed: int = 0, **kw) -> ToyModel:
    config = config or tiny_config()
    return ToyModel(config, init_params(config, seed), **kw)


def flat_store(**groups) -> ParameterStore:
    """ParameterStore of ffn-bias vectors from plain lists, in keyword order."""
    return ParameterStore(
        ParamGroup(name, Role.FFN_BIAS, Tensor(np.asarray(v, dtype=np.float64)))
        for name, v in groups.items()
    )


def random_bottleneck(rng: np.random.Generator, width: int, r: int, *,
                      out_width: int | None = None, zero_up: bool = False,
                      biases: bool = True) -> Bottleneck:
    out_width = width if out_width is None else out_width
    up = np.zeros((r, out_width)) if zero_up else rng.normal(size=(r, out_width))
    return Bottleneck(
        Tensor(rng.normal(size=(width, r))),
        Tensor(up),
        Tensor(rng.normal(size=(r,))) if biases else None,
        (Tensor(np.zeros(out_width)) if zero_up else Tensor(rng.normal(size=(out_width,))))
        if biases else None,
    )


def with_random_adapter(weights, seed: int = 1):
    """Same sites, every part redrawn (so W_up is no longer zero)."""
    rng = np.random.default_rng(seed)
    sites = {}
    for site, b in weights:
        parts = {k: Tensor(rng.normal(scale=0.3, size=t.shape)) for k, t in b.parts().items()}
        sites[site] = Bottleneck(parts["down.weight"], parts["up.weight"],
                                 parts.get("down.bias"), parts.get("up.bias"))
    return type(weights)(weights.spec, sites)


def read_json(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def file_bytes(path) -> bytes:
    return Path(path).read_bytes()
