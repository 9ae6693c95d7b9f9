# (C) 2026 pafi-hiwi contributors
# SPDX-License-Identifier: AGPL-3.0-or-later

"""
Toy post-norm transformer encoder.

Activations are kept as (batch·seq, d) matrices; attention reshapes them to
(batch·heads, seq, head_dim) for the batched product. Linear weights are
stored input-major, so every projection is literally ``h @ W + b``.
"""

from __future__ import annotations

import math
from collections.abc import Iterable, Mapping
from dataclasses import dataclass
from typing import Any, Union

import numpy as np
from numpy.typing import NDArray

from pafi.errors import ConfigurationError, DimensionError
from pafi.numerics import Graph, Tensor, Var, backward, gradients_by_name, ops
from pafi.stores import ModelMeta, ParameterStore, ParamGroup, Role

Operand = Union[Tensor, Var]

FFN_MULT = 4


@dataclass(frozen=True)
class ToyModelConfig:
    V: int = 50
    n: int = 16
    d: int = 8
    L: int = 2
    heads: int = 2
    classes: int = 2
    ffn_mult: int = FFN_MULT
    eps: float = 1e-5

    def __post_init__(self) -> None:
        for name in ("V", "n", "d", "L", "heads", "classes"):
            if int(getattr(self, name)) < 1:
                raise ConfigurationError(f"model.{name} must be a positive integer")
        if self.d % self.heads:
            raise ConfigurationError(f"heads ({self.heads}) must divide d ({self.d})")
        if self.ffn_mult != FFN_MULT:
            raise ConfigurationError(f"ffn_mult is fixed at {FFN_MULT}, got {self.ffn_mult}")

    @property
    def meta(self) -> ModelMeta:
        return ModelMeta(V=self.V, n=self.n, d=self.d, L=self.L,
                         heads=self.heads, classes=self.classes)

    @classmethod
    def from_meta(cls, meta: ModelMeta) -> "ToyModelConfig":
        return cls(**meta.to_dict())

    @classmethod
    def from_cfg(cls, section: Mapping[str, Any]) -> "ToyModelConfig":
        return cls(**{k: int(section[k]) for k in ("V", "n", "d", "L", "heads", "classes")})


class ForwardHooks:
    """
    Extension points of the forward pass. The base class is the plain
    model; adapter families override the pieces they attach to.
    """

    def linear(self, name: str, h: Operand, W: Operand, b: Operand) -> Operand:
        return ops.bias_add(ops.matmul(h, W), b)

    def after_attention(self, layer: int, a: Operand) -> Operand:
        return a

    def after_ffn(self, layer: int, f: Operand) -> Operand:
        return f


PLAIN = ForwardHooks()


def _init_group(rng: np.random.Generator, role: Role, shape: tuple[int, ...],
                fan_in: int, d: int) -> NDArray[np.float64]:
    if role in (Role.EMBEDDING, Role.POSITION_EMBEDDING):
        return rng.normal(0.0, 1.0 / math.sqrt(d), size=shape)
    if role is Role.NORM_WEIGHT:
        return np.ones(shape)
    if role is Role.NORM_BIAS:
        return np.zeros(shape)
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_params(config: ToyModelConfig, seed: int) -> ParameterStore:
    """Seeded θ for the toy encoder, in canonical group order."""
    rng = np.random.default_rng(seed)
    groups = []
    fan_in = config.d
    for name, role, shape in config.meta.inventory():
        if len(shape) == 2 and role not in (Role.EMBEDDING, Role.POSITION_EMBEDDING):
            fan_in = shape[0]
        groups.append(ParamGroup(name, role, Tensor(_init_group(rng, role, shape, fan_in, config.d))))
    return ParameterStore(groups, meta=config.meta)


def reinit_classifier(store: ParameterStore, seed: int) -> ParameterStore:
    """Fresh classifier head (the newly added task layer) on an existing θ."""
    rng = np.random.default_rng(seed)
    w = store["classifier.weight"].tensor
    bound = 1.0 / math.sqrt(w.shape[0])
    return store.replace({
        "classifier.weight": Tensor(rng.uniform(-bound, bound, size=w.shape)),
        "classifier.bias": Tensor.zeros(store["classifier.bias"].shape),
    })


def encode(config: ToyModelConfig, w: Mapping[str, Operand], tokens: NDArray[np.int64],
           hooks: ForwardHooks = PLAIN) -> Operand:
    """Logits (batch, classes) for a (batch, seq) token matrix."""
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.ndim != 2:
        raise DimensionError(f"tokens must be (batch, seq), got shape {list(tokens.shape)}")
    B, s = tokens.shape
    if s > config.n:
        raise DimensionError(f"sequence length {s} exceeds model maximum {config.n}")
    d, H = config.d, config.heads
    dh = d // H
    eps = config.eps

    x = ops.add(
        ops.gather(w["embeddings.word.weight"], tokens.reshape(-1)),
        ops.gather(w["embeddings.position.weight"], np.tile(np.arange(s), B)),
    )
    h = ops.layer_norm(x, w["embeddings.norm.weight"], w["embeddings.norm.bias"], eps)

    def heads(t: Operand) -> Operand:
        t = ops.transpose(ops.reshape(t, (B, s, H, dh)), (0, 2, 1, 3))
        return ops.reshape(t, (B * H, s, dh))

    for i in range(config.L):
        p = f"encoder.layer.{i}"

        def proj(name: str, inp: Operand) -> Operand:
            return hooks.linear(f"{p}.{name}", inp, w[f"{p}.{name}.weight"], w[f"{p}.{name}.bias"])

        q, k, v = (heads(proj(f"attn.{n}", h)) for n in ("query", "key", "value"))
        scores = ops.scale(ops.matmul(q, ops.transpose(k, (0, 2, 1))), 1.0 / math.sqrt(dh))
        ctx = ops.matmul(ops.softmax(scores), v)
        ctx = ops.reshape(ops.transpose(ops.reshape(ctx, (B, H, s, dh)), (0, 2, 1, 3)), (B * s, d))
        a = hooks.after_attention(i, proj("attn.output", ctx))
        h = ops.layer_norm(ops.add(h, a), w[f"{p}.attn_norm.weight"], w[f"{p}.attn_norm.bias"], eps)

        f = ops.gelu(proj("ffn1", h))
        f = hooks.after_ffn(i, proj("ffn2", f))
        h = ops.layer_norm(ops.add(h, f), w[f"{p}.ffn_norm.weight"], w[f"{p}.ffn_norm.bias"], eps)

    cls = ops.gather(h, np.arange(B) * s)
    return ops.bias_add(ops.matmul(cls, w["classifier.weight"]), w["classifier.bias"])


def task_loss(kind: str, logits: Operand, labels: NDArray[Any]) -> Operand:
    if kind == "classification":
        return ops.cross_entropy(logits, labels)
    if kind == "regression":
        return ops.mse(logits, labels)
    raise ConfigurationError(f"unknown task kind {kind!r}")


@dataclass
class GraphRun:
    graph: Graph
    loss: Var
    logits: Var
    leaves: dict[str, Var]


class ToyModel:
    """
    The encoder bound to its parameters φ (θ, plus δ groups when an adapter
    spec is attached). Forward passes with a spec route through the adapter
    wiring; without one they are the plain encoder.
    """

    def __init__(self, config: ToyModelConfig, params: ParameterStore, *,
                 task_kind: str = "classification", adapter: Any = None):
        self.config = config
        self.params = params
        self.task_kind = task_kind
        self.adapter = adapter

    def with_params(self, params: ParameterStore) -> "ToyModel":
        return ToyModel(self.config, params, task_kind=self.task_kind, adapter=self.adapter)

    def _wire(self, values: Mapping[str, Operand]) -> tuple[Mapping[str, Operand], ForwardHooks]:
        if self.adapter is None:
            return values, PLAIN
        from pafi.adapters.attach import wire  # adapters import ForwardHooks from here
        return wire(self.adapter, values)

    def forward(self, tokens: NDArray[np.int64], params: ParameterStore | None = None) -> Tensor:
        store = self.params if params is None else params
        weights, hooks = self._wire({g.name: g.tensor for g in store})
        return encode(self.config, weights, tokens, hooks)

    def loss(self, tokens: NDArray[np.int64], labels: NDArray[Any],
             params: ParameterStore | None = None) -> float:
        return task_loss(self.task_kind, self.forward(tokens, params), labels).item()

    def build_graph(self, tokens: NDArray[np.int64], labels: NDArray[Any], *,
                    params: ParameterStore | None = None,
                    trainable: Iterable[str] | None = None) -> GraphRun:
        store = self.params if params is None else params
        wanted = set(store.names if trainable is None else trainable)
        g = Graph()
        leaves = {p.name: g.leaf(p.tensor, trainable=p.name in wanted, name=p.name) for p in store}
        weights, hooks = self._wire(leaves)
        logits = encode(self.config, weights, tokens, hooks)
        return GraphRun(g, task_loss(self.task_kind, logits, labels), logits, leaves)

    def gradients(self, tokens: NDArray[np.int64], labels: NDArray[Any], *,
                  params: ParameterStore | None = None,
                  trainable: Iterable[str] | None = None) -> tuple[float, dict[str, Tensor]]:
        """(loss, ∇loss per trainable group)."""
        run = self.build_graph(tokens, labels, params=params, trainable=trainable)
        grads = gradients_by_name(run.graph, backward(run.graph, run.loss))
        return run.loss.value.item(), grads

    def sample_gradients(self, sample: Any) -> dict[str, Tensor]:
        _, grads = self.gradients(sample.tokens, sample.labels)
        return grads


def build_model(config: ToyModelConfig, seed: int, *,
                task_kind: str = "classification") -> ToyModel:
    return ToyModel(config, init_params(config, seed), task_kind=task_kind)
