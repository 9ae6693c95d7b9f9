# (C) 2026 pafi-hiwi contributors
# SPDX-License-Identifier: AGPL-3.0-or-later

"""
Placing adapters on the toy encoder: default sites per kind, seeded
initialization, forward wiring and merging back into θ.
"""

from __future__ import annotations

import math
import re
from collections.abc import Mapping

import numpy as np

from pafi.adapters.base import (
    HIWI,
    AdapterKind,
    AdapterSpec,
    AdapterWeights,
    Bottleneck,
    check_bottleneck,
)
from pafi.adapters.ops import Operand, adapter_forward, hiwi_merge, lora_branch, lora_merge
from pafi.bench.model import ForwardHooks
from pafi.errors import ConfigurationError, ContractError
from pafi.log import get_logger
from pafi.numerics import Tensor, ops
from pafi.stores import ParameterStore, Role

log = get_logger()

_ATTN = ("query", "key", "value", "output")


def _layers(store: ParameterStore) -> int:
    if store.meta is not None:
        return store.meta.L
    L = 0
    while f"encoder.layer.{L}.ffn1.weight" in store:
        L += 1
    return L


def _hidden(store: ParameterStore) -> int:
    if store.meta is not None:
        return store.meta.d
    return store["encoder.layer.0.ffn2.bias"].shape[0]


def default_targets(spec: AdapterSpec, store: ParameterStore) -> list[str]:
    """Base groups (lora / hiwi) or insertion sites (bottleneck adapters) of a kind."""
    L = _layers(store)
    out: list[str] = []
    for i in range(L):
        p = f"encoder.layer.{i}"
        if spec.kind is AdapterKind.ADAPTER:
            out += [f"{p}.attn_adapter", f"{p}.ffn_adapter"]
        elif spec.kind is AdapterKind.PFEIFFER_ADAPTER:
            out.append(f"{p}.ffn_adapter")
        elif spec.kind is AdapterKind.LORA:
            out += [f"{p}.attn.query.weight", f"{p}.attn.value.weight"]
        else:
            part = "bias" if spec.kind is AdapterKind.HIWI_BIAS else "weight"
            if spec.attention_targets:
                out += [f"{p}.attn.{n}.{part}" for n in _ATTN]
            out += [f"{p}.ffn1.{part}", f"{p}.ffn2.{part}"]
    return out


def _valid_target(spec: AdapterSpec, store: ParameterStore, name: str) -> bool:
    if name not in store:
        return False
    if spec.kind is AdapterKind.HIWI_BIAS:
        return store[name].role in (Role.ATTN_BIAS, Role.FFN_BIAS)
    return store[name].role in (Role.ATTN_WEIGHT, Role.FFN_WEIGHT)


def targets_of(spec: AdapterSpec, store: ParameterStore) -> list[str]:
    targets = list(spec.targets) or default_targets(spec, store)
    if spec.kind in (AdapterKind.ADAPTER, AdapterKind.PFEIFFER_ADAPTER):
        L = _layers(store)
        valid = {f"encoder.layer.{i}.{s}" for i in range(L) for s in ("attn_adapter", "ffn_adapter")}
        bad = [t for t in targets if t not in valid]
    else:
        bad = [t for t in targets if not _valid_target(spec, store, t)]
    if bad:
        raise ConfigurationError(f"invalid {spec.kind.value} targets: {', '.join(bad)}")
    return targets


def sites_of(spec: AdapterSpec, store: ParameterStore) -> list[str]:
    targets = targets_of(spec, store)
    if spec.kind in (AdapterKind.ADAPTER, AdapterKind.PFEIFFER_ADAPTER):
        return targets
    return [spec.site_of(t) for t in targets]


def hiwi_bottleneck(width: int, d: int, r: int) -> int:
    """2r when the adapted axis is 4d wide (ffn2 input, ffn1 bias), r everywhere else."""
    return 2 * r if width == 4 * d else r


def _pair(rng: np.random.Generator, width: int, out_width: int, r: int, *,
          biases: bool) -> Bottleneck[Tensor]:
    bound = 1.0 / math.sqrt(width)
    return Bottleneck(
        down=Tensor(rng.uniform(-bound, bound, size=(width, r))),
        up=Tensor.zeros((r, out_width)),
        down_bias=Tensor.zeros((r,)) if biases else None,
        up_bias=Tensor.zeros((out_width,)) if biases else None,
    )


def build_adapter(spec: AdapterSpec, store: ParameterStore, seed: int) -> AdapterWeights[Tensor]:
    """Fresh δ for a spec: W_down uniform ±1/√width, W_up and b_up exactly zero."""
    rng = np.random.default_rng(seed)
    d = _hidden(store)
    sites: dict[str, Bottleneck[Tensor]] = {}
    for site, target in zip(sites_of(spec, store), targets_of(spec, store)):
        if spec.kind in (AdapterKind.ADAPTER, AdapterKind.PFEIFFER_ADAPTER):
            sites[site] = _pair(rng, d, d, spec.r, biases=True)
        elif spec.kind is AdapterKind.LORA:
            d_in, d_out = store[target].shape
            sites[site] = _pair(rng, d_in, d_out, spec.r, biases=False)
        else:
            width = store[target].shape[0]
            sites[site] = _pair(rng, width, width, hiwi_bottleneck(width, d, spec.r), biases=True)
    weights = AdapterWeights(spec, sites)
    log.debug(f"built {spec.kind.value} adapter: {len(sites)} sites, {weights.total} params")
    return weights


def check_adapter(weights: AdapterWeights[Tensor], store: ParameterStore) -> None:
    """Shapes of every site against the base store."""
    spec = weights.spec
    d = _hidden(store)
    expected = sites_of(spec, store)
    if sorted(expected) != sorted(weights.sites):
        missing = sorted(set(expected) ^ set(weights.sites))
        raise ConfigurationError(f"adapter sites do not match {spec.kind.value} placement: {', '.join(missing)}")
    for site, b in weights:
        if spec.kind in (AdapterKind.ADAPTER, AdapterKind.PFEIFFER_ADAPTER):
            check_bottleneck(b, d, where=site)
        elif spec.kind is AdapterKind.LORA:
            d_in, d_out = store[spec.target_of(site)].shape
            check_bottleneck(b, d_in, out_width=d_out, where=site)
        else:
            check_bottleneck(b, store[spec.target_of(site)].shape[0], where=site)


def theta_roles(spec: AdapterSpec) -> frozenset[Role]:
    """Base roles trained next to δ: layer norms for the Houlsby adapter, nothing otherwise."""
    if spec.kind is AdapterKind.ADAPTER:
        return frozenset({Role.NORM_WEIGHT, Role.NORM_BIAS})
    return frozenset()


def theta_groups(spec: AdapterSpec, store: ParameterStore) -> list[str]:
    roles = theta_roles(spec)
    return [g.name for g in store
            if g.role in roles and g.name.startswith("encoder.layer.")]


# ---------------- forward wiring ----------------

class AdapterHooks(ForwardHooks):
    def __init__(self, spec: AdapterSpec, delta: AdapterWeights):
        self.spec = spec
        self.delta = delta

    def linear(self, name: str, h: Operand, W: Operand, b: Operand) -> Operand:
        out = ops.matmul(h, W)
        if self.spec.kind is AdapterKind.LORA:
            branch = self.delta.get(self.spec.site_of(f"{name}.weight"))
            if branch is not None:
                out = ops.add(out, lora_branch(h, branch, self.spec.lora_scale))
        return ops.bias_add(out, b)

    def _site(self, layer: int, where: str, x: Operand) -> Operand:
        b = self.delta.get(f"encoder.layer.{layer}.{where}")
        return x if b is None else adapter_forward(x, b, self.spec.f)

    def after_attention(self, layer: int, a: Operand) -> Operand:
        return self._site(layer, "attn_adapter", a)

    def after_ffn(self, layer: int, f: Operand) -> Operand:
        return self._site(layer, "ffn_adapter", f)


_DELTA_NAME = re.compile(
    r"^(?P<site>.+\.(?:lora|hiwi)|encoder\.layer\.\d+\.(?:attn|ffn)_adapter)"
    r"\.(?:down|up)\.(?:weight|bias)$"
)


def _split(values: Mapping[str, Operand]) -> tuple[dict[str, Operand], list[str]]:
    """Separate θ entries from δ entries of a φ mapping; returns (θ, sites)."""
    theta: dict[str, Operand] = {}
    sites: list[str] = []
    for name, v in values.items():
        m = _DELTA_NAME.match(name)
        if m is None:
            theta[name] = v
        elif m["site"] not in sites:
            sites.append(m["site"])
    return theta, sites


def effective_params(spec: AdapterSpec, theta: Mapping[str, Operand],
                     delta: AdapterWeights) -> dict[str, Operand]:
    """θ as the forward sees it: HiWi targets replaced by their merged form."""
    out = dict(theta)
    if spec.kind in HIWI:
        for site, b in delta:
            target = spec.target_of(site)
            out[target] = hiwi_merge(theta[target], b, spec.f)
    return out


def wire(spec: AdapterSpec, values: Mapping[str, Operand]) -> tuple[dict[str, Operand], ForwardHooks]:
    """(weights, hooks) for a forward over φ = θ ∪ δ."""
    theta, sites = _split(values)
    delta = AdapterWeights.from_mapping(spec, sites, values)
    return effective_params(spec, theta, delta), AdapterHooks(spec, delta)


# ---------------- merging ----------------

def merge_into(store: ParameterStore, weights: AdapterWeights[Tensor]) -> ParameterStore:
    """Plain θ with the adapter folded in; same inventory as the base model."""
    spec = weights.spec
    if not spec.mergeable:
        raise ContractError(f"{spec.kind.value} adapters sit in the forward path and cannot be merged")
    check_adapter(weights, store)
    updates: dict[str, Tensor] = {}
    for site, b in weights:
        target = spec.target_of(site)
        if spec.kind is AdapterKind.LORA:
            updates[target] = lora_merge(store[target].tensor, b, spec.lora_scale)
        else:
            updates[target] = hiwi_merge(store[target].tensor, b, spec.f)
    return store.replace(updates)


def hiwi_bias_artifact(store: ParameterStore, weights: AdapterWeights[Tensor]) -> ParameterStore:
    """
    The per-task HiWi-bias deliverable: merged bias vectors plus the task's
    classifier. Its size does not depend on r.
    """
    if weights.spec.kind is not AdapterKind.HIWI_BIAS:
        raise ContractError("bias artifacts exist only for hiwi_bias adapters")
    merged = merge_into(store, weights)
    names = [weights.spec.target_of(s) for s, _ in weights]
    names += [g.name for g in store.by_role(Role.CLASSIFIER)]
    return merged.select(names)


def overlay(store: ParameterStore, artifact: ParameterStore) -> ParameterStore:
    """Apply a plain-group artifact (such as merged biases) onto θ."""
    if artifact.by_role(Role.ADAPTER):
        raise ContractError("artifact holds adapter groups; merge it instead of overlaying")
    return store.replace({g.name: g.tensor for g in artifact})
