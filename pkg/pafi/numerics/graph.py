# (C) 2026 pafi-hiwi contributors
# SPDX-License-Identifier: AGPL-3.0-or-later

"""
Reverse-mode differentiation over a Wengert list.

A Graph records one Node per operation in creation order, so the node list is
already a topological order: every node's inputs have smaller ids.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np
from numpy.typing import NDArray

from pafi.errors import ContractError, NumericError
from pafi.numerics.tensor import Tensor


@dataclass(eq=False)
class Node:
    id: int
    op: str
    inputs: tuple[int, ...]
    value: Tensor
    params: dict[str, Any] = field(default_factory=dict)
    cache: Any = None
    trainable: bool = False
    requires_grad: bool = False
    name: str | None = None


class Var:
    """Handle to a node of a Graph; supports the arithmetic the model needs."""

    __slots__ = ("graph", "id")

    def __init__(self, graph: "Graph", node_id: int):
        self.graph = graph
        self.id = node_id

    @property
    def value(self) -> Tensor:
        return self.graph.nodes[self.id].value

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __matmul__(self, other):
        from pafi.numerics.ops import matmul
        return matmul(self, other)

    def __add__(self, other):
        from pafi.numerics.ops import add
        return add(self, other)

    def __sub__(self, other):
        from pafi.numerics.ops import sub
        return sub(self, other)

    def __mul__(self, other):
        from pafi.numerics.ops import mul, scale
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __repr__(self) -> str:
        node = self.graph.nodes[self.id]
        return f"Var(id={self.id}, op={node.op}, shape={list(self.shape)})"


class Graph:
    def __init__(self) -> None:
        self.nodes: list[Node] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def leaf(self, tensor: Tensor, *, trainable: bool = False,
             name: str | None = None) -> Var:
        node = Node(
            id=len(self.nodes), op="leaf", inputs=(), value=tensor,
            trainable=trainable, requires_grad=trainable, name=name,
        )
        self.nodes.append(node)
        return Var(self, node.id)

    def record(self, op: str, inputs: tuple[Var, ...], value: Tensor, *,
               params: dict[str, Any], cache: Any) -> Var:
        for v in inputs:
            if v.graph is not self:
                raise ContractError("operands belong to different graphs")
        node = Node(
            id=len(self.nodes), op=op, inputs=tuple(v.id for v in inputs),
            value=value, params=params, cache=cache,
            requires_grad=any(self.nodes[v.id].requires_grad for v in inputs),
        )
        self.nodes.append(node)
        return Var(self, node.id)

    def topological_order(self) -> list[int]:
        return [n.id for n in self.nodes]

    def trainable_leaves(self) -> list[Node]:
        return [n for n in self.nodes if n.op == "leaf" and n.trainable]


def backward(graph: Graph, loss: Var | int) -> dict[int, Tensor]:
    """
    Gradients of a scalar loss node with respect to every trainable leaf.

    Leaves the loss does not depend on receive zero gradients.
    """
    from pafi.numerics.ops import OPS

    loss_id = loss.id if isinstance(loss, Var) else int(loss)
    loss_node = graph.nodes[loss_id]
    if loss_node.value.size != 1:
        raise ContractError(
            f"backward needs a scalar loss, node {loss_id} has shape "
            f"{list(loss_node.value.shape)}"
        )

    grads: dict[int, NDArray[np.float64]] = {
        loss_id: np.ones(loss_node.value.shape, dtype=np.float64)
    }
    for node in reversed(graph.nodes[: loss_id + 1]):
        g = grads.get(node.id)
        if g is None or node.op == "leaf" or not node.requires_grad:
            continue
        inputs = [graph.nodes[i] for i in node.inputs]
        local = OPS[node.op].backward(
            g, [n.value.data for n in inputs], node.value.data, node.cache,
            **node.params,
        )
        for parent, pg in zip(inputs, local):
            if pg is None or not parent.requires_grad:
                continue
            prev = grads.get(parent.id)
            grads[parent.id] = pg if prev is None else prev + pg

    out: dict[int, Tensor] = {}
    for node in graph.trainable_leaves():
        g = grads.get(node.id)
        if g is None:
            g = np.zeros(node.value.shape, dtype=np.float64)
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient for leaf {node.name or node.id}")
        out[node.id] = Tensor._adopt(np.array(g, dtype=np.float64))
    return out


def gradients_by_name(graph: Graph, grads: dict[int, Tensor]) -> dict[str, Tensor]:
    """Re-key a backward() result by leaf name."""
    out: dict[str, Tensor] = {}
    for node_id, g in grads.items():
        name = graph.nodes[node_id].name
        if name is not None:
            out[name] = g
    return out
