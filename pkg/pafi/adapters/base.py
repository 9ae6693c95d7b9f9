# (C) 2026 pafi-hiwi contributors
# SPDX-License-Identifier: AGPL-3.0-or-later

from __future__ import annotations

from collections.abc import Iterator, Mapping
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Generic, TypeVar

from pafi.errors import ConfigurationError, DimensionError
from pafi.numerics import Tensor
from pafi.numerics.ops import NONLINEARITIES
from pafi.stores import ParameterStore, ParamGroup, Role

T = TypeVar("T")


class AdapterKind(str, Enum):
    ADAPTER = "adapter"
    PFEIFFER_ADAPTER = "pfeiffer_adapter"
    LORA = "lora"
    HIWI_BIAS = "hiwi_bias"
    HIWI_WEIGHT = "hiwi_weight"


MERGEABLE = frozenset({AdapterKind.LORA, AdapterKind.HIWI_BIAS, AdapterKind.HIWI_WEIGHT})
HIWI = frozenset({AdapterKind.HIWI_BIAS, AdapterKind.HIWI_WEIGHT})

# Site suffix per kind; δ groups are named "<site>.<part>".
_SITE_SUFFIX = {
    AdapterKind.LORA: "lora",
    AdapterKind.HIWI_BIAS: "hiwi",
    AdapterKind.HIWI_WEIGHT: "hiwi",
}
PARTS = ("down.weight", "down.bias", "up.weight", "up.bias")


@dataclass(frozen=True)
class AdapterSpec:
    """
    One adapter family plus its hyper-parameters.

    `targets` names base groups for lora / hiwi kinds and insertion sites
    (``encoder.layer.<i>.attn_adapter`` / ``.ffn_adapter``) for bottleneck
    adapters. Empty means the kind's default placement.
    """
    kind: AdapterKind
    r: int = 4
    f: str = "relu"
    targets: tuple[str, ...] = ()
    init: str = "down_random_up_zero"
    lora_scale: float = 1.0
    attention_targets: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", AdapterKind(self.kind))
        object.__setattr__(self, "targets", tuple(self.targets))
        if int(self.r) < 1:
            raise ConfigurationError(f"bottleneck r must be a positive integer, got {self.r}")
        if self.f not in NONLINEARITIES:
            raise ConfigurationError(
                f"unknown nonlinearity {self.f!r}; expected one of {', '.join(NONLINEARITIES)}"
            )
        if self.init != "down_random_up_zero":
            raise ConfigurationError(f"unsupported adapter init {self.init!r}")

    @property
    def mergeable(self) -> bool:
        return self.kind in MERGEABLE

    def site_of(self, target: str) -> str:
        """Site name of a base-group target (lora / hiwi kinds)."""
        return f"{target}.{_SITE_SUFFIX[self.kind]}"

    def target_of(self, site: str) -> str:
        suffix = "." + _SITE_SUFFIX[self.kind]
        if not site.endswith(suffix):
            raise ConfigurationError(f"{site!r} is not a {self.kind.value} site")
        return site[: -len(suffix)]

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind.value, "r": self.r, "f": self.f, "targets": list(self.targets),
            "init": self.init, "lora_scale": self.lora_scale,
            "attention_targets": self.attention_targets,
        }


@dataclass(frozen=True)
class Bottleneck(Generic[T]):
    """A down/up projection pair with optional biases; x ↦ f(x·down + down_bias)·up + up_bias."""
    down: T
    up: T
    down_bias: T | None = None
    up_bias: T | None = None

    def parts(self) -> dict[str, T]:
        out = {"down.weight": self.down, "up.weight": self.up}
        if self.down_bias is not None:
            out["down.bias"] = self.down_bias
        if self.up_bias is not None:
            out["up.bias"] = self.up_bias
        return out


def check_bottleneck(b: Bottleneck[Tensor], width: int, *, out_width: int | None = None,
                     where: str = "adapter") -> None:
    out_width = width if out_width is None else out_width
    down, up = b.down.shape, b.up.shape
    if len(down) != 2 or len(up) != 2 or down[0] != width or up[1] != out_width or down[1] != up[0]:
        raise DimensionError(
            f"{where}: down {list(down)} / up {list(up)} do not fit width {width}"
            + (f" → {out_width}" if out_width != width else "")
        )
    if b.down_bias is not None and b.down_bias.shape != (down[1],):
        raise DimensionError(f"{where}: down bias {list(b.down_bias.shape)} vs bottleneck {down[1]}")
    if b.up_bias is not None and b.up_bias.shape != (out_width,):
        raise DimensionError(f"{where}: up bias {list(b.up_bias.shape)} vs width {out_width}")


@dataclass
class AdapterWeights(Generic[T]):
    """δ: every adapter site of one spec, in placement order."""
    spec: AdapterSpec
    sites: dict[str, Bottleneck[T]] = field(default_factory=dict)

    def __iter__(self) -> Iterator[tuple[str, Bottleneck[T]]]:
        return iter(self.sites.items())

    def __len__(self) -> int:
        return len(self.sites)

    def __contains__(self, site: object) -> bool:
        return site in self.sites

    def get(self, site: str) -> Bottleneck[T] | None:
        return self.sites.get(site)

    @property
    def total(self) -> int:
        return sum(t.size for _, b in self for t in b.parts().values())

    def group_names(self) -> list[str]:
        return [f"{site}.{part}" for site, b in self for part in b.parts()]

    def to_store(self) -> ParameterStore:
        """δ as adapter-role groups, ready to append to θ."""
        return ParameterStore(
            ParamGroup(f"{site}.{part}", Role.ADAPTER, t)
            for site, b in self for part, t in b.parts().items()
        )

    @classmethod
    def from_mapping(cls, spec: AdapterSpec, sites: list[str],
                     values: Mapping[str, T]) -> "AdapterWeights[T]":
        """Pick each site's parts out of a name → value mapping (a store or graph leaves)."""
        out: dict[str, Bottleneck[T]] = {}
        for site in sites:
            try:
                down, up = values[f"{site}.down.weight"], values[f"{site}.up.weight"]
            except KeyError:
                raise ConfigurationError(f"adapter weights for site {site!r} are missing") from None
            out[site] = Bottleneck(
                down, up,
                values.get(f"{site}.down.bias"), values.get(f"{site}.up.bias"),
            )
        return cls(spec, out)

    @classmethod
    def from_store(cls, spec: AdapterSpec, store: ParameterStore) -> "AdapterWeights[Tensor]":
        sites: list[str] = []
        for g in store.by_role(Role.ADAPTER):
            if g.name.endswith(".down.weight"):
                sites.append(g.name[: -len(".down.weight")])
        if not sites:
            raise ConfigurationError("store holds no adapter groups")
        values = {g.name: g.tensor for g in store.by_role(Role.ADAPTER)}
        return cls.from_mapping(spec, sites, values)
