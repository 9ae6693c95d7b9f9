# (C) 2026 pafi-hiwi contributors
# SPDX-License-Identifier: AGPL-3.0-or-later

"""
Differentiable operations.

Every public function accepts Tensors or graph Vars. With only Tensors the
op is evaluated eagerly and a Tensor comes back; with at least one Var the
op is recorded on that Var's graph and a Var comes back. Both paths run the
same forward kernel, so recorded and eager results are bit-identical.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from typing import Any, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray

from pafi.errors import ConfigurationError, ContractError, DimensionError
from pafi.numerics.graph import Var
from pafi.numerics.tensor import Tensor, as_tensor

Operand = Union[Tensor, Var]
Array = NDArray[np.float64]

NONLINEARITIES = ("relu", "gelu", "identity")

_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_K = 0.044715


def _shape(x: Array) -> list[int]:
    return list(x.shape)


def _swap(x: Array) -> Array:
    return np.swapaxes(x, -1, -2)


class _Op:
    def forward(self, *xs: Array, **params: Any) -> tuple[Array, Any]:
        raise NotImplementedError

    def backward(self, g: Array, xs: list[Array], out: Array, cache: Any,
                 **params: Any) -> tuple[Array | None, ...]:
        raise NotImplementedError


class _MatMul(_Op):
    def forward(self, a, b):
        ok = (
            (a.ndim == 2 and b.ndim == 2 and a.shape[1] == b.shape[0])
            or (a.ndim == 3 and b.ndim == 3 and a.shape[0] == b.shape[0]
                and a.shape[2] == b.shape[1])
        )
        if not ok:
            raise DimensionError(f"matmul: cannot multiply {_shape(a)} by {_shape(b)}")
        return a @ b, None

    def backward(self, g, xs, out, cache):
        a, b = xs
        return g @ _swap(b), _swap(a) @ g


def _same_shape(name: str, a: Array, b: Array) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{name}: shapes {_shape(a)} and {_shape(b)} differ")


class _Add(_Op):
    def forward(self, a, b):
        _same_shape("add", a, b)
        return a + b, None

    def backward(self, g, xs, out, cache):
        return g, g


class _Sub(_Op):
    def forward(self, a, b):
        _same_shape("sub", a, b)
        return a - b, None

    def backward(self, g, xs, out, cache):
        return g, -g


class _Mul(_Op):
    def forward(self, a, b):
        _same_shape("mul", a, b)
        return a * b, None

    def backward(self, g, xs, out, cache):
        a, b = xs
        return g * b, g * a


class _Scale(_Op):
    def forward(self, x, *, c):
        return x * c, None

    def backward(self, g, xs, out, cache, *, c):
        return (g * c,)


class _BiasAdd(_Op):
    def forward(self, x, b):
        if b.ndim != 1 or x.ndim < 1 or x.shape[-1] != b.shape[0]:
            raise DimensionError(f"bias_add: bias {_shape(b)} does not fit {_shape(x)}")
        return x + b, None

    def backward(self, g, xs, out, cache):
        b = xs[1]
        return g, g.reshape(-1, b.shape[0]).sum(axis=0)


class _Nonlinearity(_Op):
    def forward(self, x, *, kind):
        if kind == "identity":
            return x, None
        if kind == "relu":
            return np.maximum(x, 0.0), None
        # gelu, tanh approximation
        t = np.tanh(_GELU_C * (x + _GELU_K * x ** 3))
        return 0.5 * x * (1.0 + t), t

    def backward(self, g, xs, out, cache, *, kind):
        x = xs[0]
        if kind == "identity":
            return (g,)
        if kind == "relu":
            return (g * (x > 0.0),)
        t = cache
        du = _GELU_C * (1.0 + 3.0 * _GELU_K * x ** 2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t ** 2) * du),)


class _Reshape(_Op):
    def forward(self, x, *, shape):
        if int(np.prod(shape)) != x.size:
            raise DimensionError(f"reshape: cannot view {_shape(x)} as {list(shape)}")
        return x.reshape(shape), None

    def backward(self, g, xs, out, cache, *, shape):
        return (g.reshape(xs[0].shape),)


class _Transpose(_Op):
    def forward(self, x, *, axes):
        if sorted(axes) != list(range(x.ndim)):
            raise DimensionError(f"transpose: axes {list(axes)} invalid for {_shape(x)}")
        return x.transpose(axes), None

    def backward(self, g, xs, out, cache, *, axes):
        return (g.transpose(np.argsort(axes)),)


class _Softmax(_Op):
    def forward(self, x):
        z = x - x.max(axis=-1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=-1, keepdims=True), None

    def backward(self, g, xs, out, cache):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)


class _LayerNorm(_Op):
    def forward(self, x, w, b, *, eps):
        d = x.shape[-1]
        if w.shape != (d,) or b.shape != (d,):
            raise DimensionError(
                f"layer_norm: weight {_shape(w)} / bias {_shape(b)} do not fit {_shape(x)}"
            )
        mu = x.mean(axis=-1, keepdims=True)
        var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (x - mu) * inv
        return xhat * w + b, (xhat, inv)

    def backward(self, g, xs, out, cache, *, eps):
        w = xs[1]
        xhat, inv = cache
        d = w.shape[0]
        dxhat = g * w
        dx = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        dw = (g * xhat).reshape(-1, d).sum(axis=0)
        db = g.reshape(-1, d).sum(axis=0)
        return dx, dw, db


class _Gather(_Op):
    def forward(self, table, *, indices):
        if indices.size and (indices.min() < 0 or indices.max() >= table.shape[0]):
            raise DimensionError(
                f"gather: index out of range for {table.shape[0]} rows"
            )
        return table[indices], None

    def backward(self, g, xs, out, cache, *, indices):
        z = np.zeros_like(xs[0])
        np.add.at(z, indices, g)
        return (z,)


class _Sum(_Op):
    def forward(self, x):
        return np.asarray(x.sum()), None

    def backward(self, g, xs, out, cache):
        return (np.full(xs[0].shape, float(g)),)


class _Mean(_Op):
    def forward(self, x):
        return np.asarray(x.mean()), None

    def backward(self, g, xs, out, cache):
        x = xs[0]
        return (np.full(x.shape, float(g) / x.size),)


class _CrossEntropy(_Op):
    def forward(self, logits, *, labels):
        if logits.ndim != 2 or labels.shape != (logits.shape[0],):
            raise DimensionError(
                f"cross_entropy: logits {_shape(logits)} vs labels {list(labels.shape)}"
            )
        if labels.min() < 0 or labels.max() >= logits.shape[1]:
            raise DimensionError("cross_entropy: label out of range")
        z = logits - logits.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        rows = np.arange(logits.shape[0])
        return np.asarray(-logp[rows, labels].mean()), np.exp(logp)

    def backward(self, g, xs, out, cache, *, labels):
        p = cache.copy()
        p[np.arange(p.shape[0]), labels] -= 1.0
        return (p * (float(g) / p.shape[0]),)


class _MSE(_Op):
    def forward(self, pred, *, target):
        if target.size != pred.size:
            raise DimensionError(f"mse: prediction {_shape(pred)} vs target {list(target.shape)}")
        diff = pred - target.reshape(pred.shape)
        return np.asarray((diff ** 2).mean()), diff

    def backward(self, g, xs, out, cache, *, target):
        return (cache * (2.0 * float(g) / cache.size),)


OPS: dict[str, _Op] = {
    "matmul": _MatMul(),
    "add": _Add(),
    "sub": _Sub(),
    "mul": _Mul(),
    "scale": _Scale(),
    "bias_add": _BiasAdd(),
    "nonlinearity": _Nonlinearity(),
    "reshape": _Reshape(),
    "transpose": _Transpose(),
    "softmax": _Softmax(),
    "layer_norm": _LayerNorm(),
    "gather": _Gather(),
    "sum": _Sum(),
    "mean": _Mean(),
    "cross_entropy": _CrossEntropy(),
    "mse": _MSE(),
}


def _apply(op_name: str, /, *operands: Operand | ArrayLike, **params: Any):
    graph = None
    for x in operands:
        if isinstance(x, Var):
            if graph is None:
                graph = x.graph
            elif x.graph is not graph:
                raise ContractError("operands belong to different graphs")
    arrays = [x.value.data if isinstance(x, Var) else as_tensor(x).data for x in operands]
    out, cache = OPS[op_name].forward(*arrays, **params)
    value = Tensor._adopt(out)
    if graph is None:
        return value
    inputs = tuple(
        x if isinstance(x, Var) else graph.leaf(as_tensor(x)) for x in operands
    )
    return graph.record(op_name, inputs, value, params=params, cache=cache)


# ---------------- public API ----------------

def matmul(a: Operand, b: Operand):
    """a @ b for rank-2 operands, or batched over a shared leading dimension."""
    return _apply("matmul", a, b)

def add(a: Operand, b: Operand):
    return _apply("add", a, b)

def sub(a: Operand, b: Operand):
    return _apply("sub", a, b)

def mul(a: Operand, b: Operand):
    return _apply("mul", a, b)

def scale(x: Operand, c: float):
    return _apply("scale", x, c=float(c))

def bias_add(x: Operand, b: Operand):
    """x + b with b broadcast over every leading dimension of x."""
    return _apply("bias_add", x, b)

def nonlinearity(x: Operand, kind: str):
    if kind not in NONLINEARITIES:
        raise ConfigurationError(
            f"unknown nonlinearity {kind!r}; expected one of {', '.join(NONLINEARITIES)}"
        )
    return _apply("nonlinearity", x, kind=kind)

def relu(x: Operand):
    return nonlinearity(x, "relu")

def gelu(x: Operand):
    return nonlinearity(x, "gelu")

def reshape(x: Operand, shape: Sequence[int]):
    return _apply("reshape", x, shape=tuple(int(s) for s in shape))

def transpose(x: Operand, axes: Sequence[int]):
    return _apply("transpose", x, axes=tuple(int(a) for a in axes))

def softmax(x: Operand):
    return _apply("softmax", x)

def layer_norm(x: Operand, weight: Operand, bias: Operand, eps: float = 1e-5):
    return _apply("layer_norm", x, weight, bias, eps=float(eps))

def gather(table: Operand, indices: ArrayLike):
    """Rows of table picked by an integer index array of any shape."""
    return _apply("gather", table, indices=np.asarray(indices, dtype=np.int64))

def sum_all(x: Operand):
    return _apply("sum", x)

def mean_all(x: Operand):
    return _apply("mean", x)

def cross_entropy(logits: Operand, labels: ArrayLike):
    return _apply("cross_entropy", logits, labels=np.asarray(labels, dtype=np.int64))

def mse(pred: Operand, target: ArrayLike):
    return _apply("mse", pred, target=np.asarray(target, dtype=np.float64))
