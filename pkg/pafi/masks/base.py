# (C) 2026 pafi-hiwi contributors
# SPDX-License-Identifier: AGPL-3.0-or-later

from __future__ import annotations

from collections.abc import Iterable, Iterator, Mapping
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from numpy.typing import ArrayLike, NDArray

from pafi.errors import AlignmentError, ContractError, ProvenanceMismatchError
from pafi.stores import ParameterStore

Indices = NDArray[np.uint64]


class Scope(str, Enum):
    GROUP_WISE = "group_wise"
    GLOBAL = "global"


class Selector(str, Enum):
    SMALLEST = "smallest"
    LARGEST = "largest"
    MIDDLE = "middle"
    RANDOM = "random"
    DIFF = "diff"
    FISHER = "fisher"
    ROLE = "role"


# PFMK byte codes; order is part of the file format.
SCOPE_CODES = {s: i for i, s in enumerate(Scope)}
SELECTOR_CODES = {s: i for i, s in enumerate(Selector)}


@dataclass(frozen=True)
class MaskPolicy:
    tune_norm: bool = True
    tune_embed: bool = False

    def to_byte(self) -> int:
        return int(self.tune_norm) | (int(self.tune_embed) << 1)

    @classmethod
    def from_byte(cls, b: int) -> "MaskPolicy":
        return cls(tune_norm=bool(b & 1), tune_embed=bool(b & 2))


@dataclass(frozen=True)
class MaskGroup:
    """Selected flat indices of one parameter group (sorted, unique)."""
    name: str
    size: int
    indices: Indices = field(repr=False)

    def __post_init__(self) -> None:
        idx = np.ascontiguousarray(self.indices, dtype=np.uint64).reshape(-1)
        if idx.size:
            if np.any(idx[1:] <= idx[:-1]):
                raise ContractError(f"mask group {self.name!r}: indices not strictly increasing")
            if int(idx[-1]) >= self.size:
                raise ContractError(
                    f"mask group {self.name!r}: index {int(idx[-1])} out of range for size {self.size}"
                )
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)

    @property
    def count(self) -> int:
        return int(self.indices.size)

    @property
    def full(self) -> bool:
        return self.count == self.size

    def as_dense(self) -> NDArray[np.bool_]:
        out = np.zeros(self.size, dtype=bool)
        out[self.indices.astype(np.int64)] = True
        return out


class SparseMask:
    """
    Binary mask m over a store, held as per-group sorted index lists.

    Every group of the target store is listed (possibly with no indices), so
    a mask also pins the structure it was generated for.
    """

    def __init__(
        self,
        groups: Iterable[MaskGroup],
        *,
        sparsity: float,
        scope: Scope = Scope.GROUP_WISE,
        selector: Selector = Selector.SMALLEST,
        policy: MaskPolicy = MaskPolicy(),
        provenance: str = "",
        seed: int = 0,
    ):
        self._groups: dict[str, MaskGroup] = {}
        for g in groups:
            if g.name in self._groups:
                raise ContractError(f"mask lists group {g.name!r} twice")
            self._groups[g.name] = g
        self.sparsity = float(sparsity)
        self.scope = Scope(scope)
        self.selector = Selector(selector)
        self.policy = policy
        self.provenance = provenance
        self.seed = int(seed)

    # -------- construction helpers --------
    @classmethod
    def from_indices(cls, store: ParameterStore, selected: Mapping[str, ArrayLike],
                     **kwargs) -> "SparseMask":
        """Mask over every group of store; groups absent from selected get none."""
        unknown = set(selected) - set(store.names)
        if unknown:
            raise AlignmentError("mask names unknown groups", unknown)
        groups = [
            MaskGroup(g.name, g.size, np.sort(np.asarray(selected.get(g.name, []), dtype=np.uint64)))
            for g in store
        ]
        kwargs.setdefault("provenance", store.content_hash())
        kwargs.setdefault("sparsity", _ratio(groups))
        return cls(groups, **kwargs)

    @classmethod
    def full(cls, store: ParameterStore, **kwargs) -> "SparseMask":
        return cls.from_indices(
            store, {g.name: np.arange(g.size, dtype=np.uint64) for g in store}, **kwargs
        )

    @classmethod
    def empty(cls, store: ParameterStore, **kwargs) -> "SparseMask":
        kwargs.setdefault("sparsity", 0.0)
        return cls.from_indices(store, {}, **kwargs)

    # -------- access --------
    def __iter__(self) -> Iterator[MaskGroup]:
        return iter(self._groups.values())

    def __len__(self) -> int:
        return len(self._groups)

    def __contains__(self, name: object) -> bool:
        return name in self._groups

    def __getitem__(self, name: str) -> MaskGroup:
        return self._groups[name]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SparseMask):
            return NotImplemented
        return (
            self.header() == other.header()
            and list(self._groups) == list(other._groups)
            and all(
                a.size == b.size and np.array_equal(a.indices, b.indices)
                for a, b in zip(self, other)
            )
        )

    def __repr__(self) -> str:
        return (
            f"SparseMask(groups={len(self)}, selected={self.total_selected}, "
            f"selector={self.selector.value}, scope={self.scope.value})"
        )

    @property
    def names(self) -> list[str]:
        return list(self._groups)

    @property
    def total_selected(self) -> int:
        return sum(g.count for g in self)

    @property
    def total_size(self) -> int:
        return sum(g.size for g in self)

    def selected(self, name: str) -> Indices:
        g = self._groups.get(name)
        return g.indices if g is not None else np.empty(0, dtype=np.uint64)

    def count(self, name: str) -> int:
        return self.selected(name).size

    def contains(self, name: str, index: int) -> bool:
        idx = self.selected(name)
        pos = int(np.searchsorted(idx, np.uint64(index)))
        return pos < idx.size and int(idx[pos]) == index

    def as_dense(self, name: str) -> NDArray[np.bool_]:
        return self._groups[name].as_dense()

    def selected_groups(self) -> list[str]:
        return [g.name for g in self if g.count]

    def header(self) -> tuple:
        return (round(self.sparsity, 15), self.scope, self.selector, self.policy,
                self.provenance, self.seed)

    # -------- combination / validation --------
    def union(self, other: "SparseMask") -> "SparseMask":
        """Index-wise OR; groups only in other are appended. Header of self is kept."""
        groups: list[MaskGroup] = []
        for g in self:
            o = other._groups.get(g.name)
            if o is None:
                groups.append(g)
                continue
            if o.size != g.size:
                raise AlignmentError("mask group sizes differ", [g.name])
            groups.append(MaskGroup(g.name, g.size, np.union1d(g.indices, o.indices)))
        groups += [o for o in other if o.name not in self._groups]
        return SparseMask(groups, sparsity=self.sparsity, scope=self.scope,
                          selector=self.selector, policy=self.policy,
                          provenance=self.provenance, seed=self.seed)

    def check_against(self, store: ParameterStore) -> None:
        """Raise AlignmentError unless mask and store list the same groups and sizes."""
        bad = set(self._groups) ^ set(store.names)
        bad |= {g.name for g in self if g.name in store and store[g.name].size != g.size}
        if bad:
            raise AlignmentError("mask does not fit store", bad)

    def check_provenance(self, store: ParameterStore) -> None:
        digest = store.content_hash()
        if self.provenance != digest:
            raise ProvenanceMismatchError(
                f"mask was generated for checkpoint {self.provenance[:12] or '?'}…, "
                f"got {digest[:12]}…"
            )


def _ratio(groups: list[MaskGroup]) -> float:
    total = sum(g.size for g in groups)
    return sum(g.count for g in groups) / total if total else 0.0
