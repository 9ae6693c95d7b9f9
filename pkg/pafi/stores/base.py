# (C) 2026 pafi-hiwi contributors
# SPDX-License-Identifier: AGPL-3.0-or-later

from __future__ import annotations

import hashlib
from collections.abc import Iterable, Iterator, Mapping
from dataclasses import dataclass, asdict
from enum import Enum
from typing import Any

import numpy as np

from pafi.errors import (
    AlignmentError,
    DimensionError,
    DuplicateNameError,
    ShapeMetaMismatchError,
)
from pafi.numerics import Tensor


class Role(str, Enum):
    EMBEDDING = "embedding"
    POSITION_EMBEDDING = "position_embedding"
    NORM_WEIGHT = "norm_weight"
    NORM_BIAS = "norm_bias"
    ATTN_WEIGHT = "attn_weight"
    ATTN_BIAS = "attn_bias"
    FFN_WEIGHT = "ffn_weight"
    FFN_BIAS = "ffn_bias"
    CLASSIFIER = "classifier"
    ADAPTER = "adapter"


# Byte codes used by the PFRG container; order is part of the file format.
ROLE_CODES: dict[Role, int] = {role: i for i, role in enumerate(Role)}
CODE_ROLES: dict[int, Role] = {i: role for role, i in ROLE_CODES.items()}

EMBED_ROLES = frozenset({Role.EMBEDDING, Role.POSITION_EMBEDDING})
NORM_ROLES = frozenset({Role.NORM_WEIGHT, Role.NORM_BIAS})
BIAS_ROLES = frozenset({Role.ATTN_BIAS, Role.FFN_BIAS, Role.NORM_BIAS})
WEIGHT_ROLES = frozenset({Role.EMBEDDING, Role.POSITION_EMBEDDING,
                          Role.ATTN_WEIGHT, Role.FFN_WEIGHT})
VECTOR_ROLES = frozenset({Role.NORM_WEIGHT, Role.NORM_BIAS,
                          Role.ATTN_BIAS, Role.FFN_BIAS})


@dataclass(frozen=True)
class ParamGroup:
    """One named tensor of a checkpoint; a weight matrix or a bias term."""
    name: str
    role: Role
    tensor: Tensor

    def __post_init__(self) -> None:
        role = Role(self.role)
        object.__setattr__(self, "role", role)
        rank = self.tensor.ndim
        if role in WEIGHT_ROLES and rank != 2:
            raise DimensionError(f"{self.name}: {role.value} must be rank 2, got rank {rank}")
        if role in VECTOR_ROLES and rank != 1:
            raise DimensionError(f"{self.name}: {role.value} must be rank 1, got rank {rank}")
        if rank not in (1, 2):
            raise DimensionError(f"{self.name}: unsupported rank {rank}")

    @property
    def size(self) -> int:
        return self.tensor.size

    @property
    def shape(self) -> tuple[int, ...]:
        return self.tensor.shape


@dataclass(frozen=True)
class ModelMeta:
    """Dimension record of a toy encoder checkpoint."""
    V: int
    n: int
    d: int
    L: int
    heads: int
    classes: int

    def to_dict(self) -> dict[str, int]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ModelMeta":
        return cls(**{k: int(data[k]) for k in ("V", "n", "d", "L", "heads", "classes")})

    def inventory(self) -> list[tuple[str, Role, tuple[int, ...]]]:
        """Every group such a model carries, in canonical order."""
        V, n, d, L, C = self.V, self.n, self.d, self.L, self.classes
        out: list[tuple[str, Role, tuple[int, ...]]] = [
            ("embeddings.word.weight", Role.EMBEDDING, (V, d)),
            ("embeddings.position.weight", Role.POSITION_EMBEDDING, (n, d)),
            ("embeddings.norm.weight", Role.NORM_WEIGHT, (d,)),
            ("embeddings.norm.bias", Role.NORM_BIAS, (d,)),
        ]
        for i in range(L):
            p = f"encoder.layer.{i}"
            for proj in ("query", "key", "value", "output"):
                out.append((f"{p}.attn.{proj}.weight", Role.ATTN_WEIGHT, (d, d)))
                out.append((f"{p}.attn.{proj}.bias", Role.ATTN_BIAS, (d,)))
            out += [
                (f"{p}.attn_norm.weight", Role.NORM_WEIGHT, (d,)),
                (f"{p}.attn_norm.bias", Role.NORM_BIAS, (d,)),
                (f"{p}.ffn1.weight", Role.FFN_WEIGHT, (d, 4 * d)),
                (f"{p}.ffn1.bias", Role.FFN_BIAS, (4 * d,)),
                (f"{p}.ffn2.weight", Role.FFN_WEIGHT, (4 * d, d)),
                (f"{p}.ffn2.bias", Role.FFN_BIAS, (d,)),
                (f"{p}.ffn_norm.weight", Role.NORM_WEIGHT, (d,)),
                (f"{p}.ffn_norm.bias", Role.NORM_BIAS, (d,)),
            ]
        out += [
            ("classifier.weight", Role.CLASSIFIER, (d, C)),
            ("classifier.bias", Role.CLASSIFIER, (C,)),
        ]
        return out

    def validate(self, groups: Iterable[ParamGroup]) -> None:
        expected = {name: (role, shape) for name, role, shape in self.inventory()}
        seen = {g.name: (g.role, g.shape) for g in groups if g.role is not Role.ADAPTER}
        bad = sorted(
            name for name in set(expected) | set(seen)
            if expected.get(name) != seen.get(name)
        )
        if bad:
            raise ShapeMetaMismatchError(
                f"groups inconsistent with meta {self.to_dict()}: {', '.join(bad[:8])}"
                + (" ..." if len(bad) > 8 else "")
            )

    @classmethod
    def infer(cls, groups: Iterable[ParamGroup], heads: int) -> "ModelMeta | None":
        """Recover meta from group shapes; None when the store is not a full model."""
        by_name = {g.name: g for g in groups}
        try:
            V, d = by_name["embeddings.word.weight"].shape
            n = by_name["embeddings.position.weight"].shape[0]
            C = by_name["classifier.bias"].shape[0]
        except KeyError:
            return None
        L = 0
        while f"encoder.layer.{L}.ffn1.weight" in by_name:
            L += 1
        return cls(V=V, n=n, d=d, L=L, heads=heads, classes=C)


class ParameterStore:
    """
    Ordered, immutable collection of ParamGroups (a checkpoint θ).

    Derivations (replace, union, select) return new stores and share the
    untouched Tensors, so unchanged groups stay bit-identical by construction.
    """

    def __init__(self, groups: Iterable[ParamGroup] = (), meta: ModelMeta | None = None):
        self._groups: tuple[ParamGroup, ...] = tuple(groups)
        self._index: dict[str, int] = {}
        for i, g in enumerate(self._groups):
            if g.name in self._index:
                raise DuplicateNameError(f"duplicate group name {g.name!r}")
            self._index[g.name] = i
        if meta is not None:
            meta.validate(self._groups)
        self.meta = meta

    # -------- container protocol --------
    def __len__(self) -> int:
        return len(self._groups)

    def __iter__(self) -> Iterator[ParamGroup]:
        return iter(self._groups)

    def __contains__(self, name: object) -> bool:
        return name in self._index

    def __getitem__(self, name: str) -> ParamGroup:
        try:
            return self._groups[self._index[name]]
        except KeyError:
            raise KeyError(f"no group named {name!r}") from None

    def __repr__(self) -> str:
        return f"ParameterStore(groups={len(self)}, total={self.total})"

    @property
    def groups(self) -> tuple[ParamGroup, ...]:
        return self._groups

    @property
    def names(self) -> list[str]:
        return [g.name for g in self._groups]

    @property
    def total(self) -> int:
        return sum(g.size for g in self._groups)

    def tensor(self, name: str) -> Tensor:
        return self[name].tensor

    def count(self, *, exclude: Iterable[Role] = (Role.CLASSIFIER,)) -> int:
        skip = set(exclude)
        return sum(g.size for g in self._groups if g.role not in skip)

    def flat_offsets(self) -> dict[str, int]:
        """Start offset of every group in the concatenated parameter vector."""
        out: dict[str, int] = {}
        pos = 0
        for g in self._groups:
            out[g.name] = pos
            pos += g.size
        return out

    # -------- derivations --------
    def by_role(self, *roles: Role) -> list[ParamGroup]:
        wanted = set(roles)
        return [g for g in self._groups if g.role in wanted]

    def select(self, names: Iterable[str], *, keep_meta: bool = False) -> "ParameterStore":
        wanted = set(names)
        missing = wanted - set(self._index)
        if missing:
            raise AlignmentError("unknown groups", missing)
        return ParameterStore(
            [g for g in self._groups if g.name in wanted],
            meta=self.meta if keep_meta else None,
        )

    def without(self, *roles: Role) -> "ParameterStore":
        skip = set(roles)
        meta = self.meta if skip <= {Role.ADAPTER} else None
        return ParameterStore([g for g in self._groups if g.role not in skip], meta=meta)

    def replace(self, updates: Mapping[str, Tensor]) -> "ParameterStore":
        unknown = set(updates) - set(self._index)
        if unknown:
            raise AlignmentError("cannot replace unknown groups", unknown)
        groups = []
        for g in self._groups:
            t = updates.get(g.name)
            if t is None:
                groups.append(g)
                continue
            if t.shape != g.shape:
                raise AlignmentError(
                    f"shape {list(t.shape)} does not fit {list(g.shape)}", [g.name]
                )
            groups.append(ParamGroup(g.name, g.role, t))
        return ParameterStore(groups, meta=self.meta)

    def union(self, other: "ParameterStore") -> "ParameterStore":
        clash = set(self._index) & set(other._index)
        if clash:
            raise DuplicateNameError(f"groups present in both stores: {', '.join(sorted(clash))}")
        return ParameterStore([*self._groups, *other._groups], meta=self.meta)

    def map(self, fn) -> "ParameterStore":
        """Same structure, each tensor replaced by fn(group)."""
        return ParameterStore(
            [ParamGroup(g.name, g.role, fn(g)) for g in self._groups], meta=self.meta
        )

    # -------- comparison / identity --------
    def bit_equal(self, other: "ParameterStore") -> bool:
        if self.names != other.names:
            return False
        return all(
            a.role == b.role and a.tensor.bit_equal(b.tensor)
            for a, b in zip(self._groups, other._groups)
        )

    def content_hash(self) -> str:
        """SHA-256 of the canonical (f64) PFRG encoding."""
        from pafi.stores.pfrg import encode_store
        return hashlib.sha256(encode_store(self, precision="f64")).hexdigest()

    def inventory(self) -> list[tuple[str, str, tuple[int, ...]]]:
        return [(g.name, g.role.value, g.shape) for g in self._groups]


def check_aligned(a: ParameterStore, b: ParameterStore) -> None:
    """Raise AlignmentError unless both stores have the same names and shapes."""
    names_a, names_b = set(a.names), set(b.names)
    bad = names_a ^ names_b
    bad |= {n for n in names_a & names_b if a[n].shape != b[n].shape}
    if bad:
        raise AlignmentError("stores are not aligned", bad)


def abs_diff(a: ParameterStore, b: ParameterStore) -> ParameterStore:
    """Elementwise |a − b| with a's structure."""
    check_aligned(a, b)
    return ParameterStore(
        ParamGroup(g.name, g.role,
                   Tensor._adopt(np.abs(g.tensor.data - b[g.name].tensor.data)))
        for g in a
    )
