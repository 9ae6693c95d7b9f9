# (C) 2026 pafi-hiwi contributors
# SPDX-License-Identifier: AGPL-3.0-or-later

"""
Rank-based parameter selection.

All selectors order scores with a stable sort, so equal scores fall back to
ascending flat index and the same inputs always give the same mask.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Iterable
from dataclasses import replace

import numpy as np
from numpy.typing import NDArray

from pafi.errors import ConfigurationError
from pafi.log import get_logger
from pafi.masks.base import MaskGroup, MaskPolicy, Scope, Selector, SparseMask
from pafi.stores import (
    BIAS_ROLES,
    EMBED_ROLES,
    NORM_ROLES,
    ParameterStore,
    ParamGroup,
    Role,
    abs_diff,
    check_aligned,
)

log = get_logger()

Scores = Callable[[ParamGroup], NDArray[np.float64]]


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _magnitude(g: ParamGroup) -> NDArray[np.float64]:
    return np.abs(g.tensor.flat())


def forced_groups(store: ParameterStore, policy: MaskPolicy) -> list[ParamGroup]:
    """Groups selected in full regardless of k (norms when tune_norm is set)."""
    if not policy.tune_norm:
        return []
    return [g for g in store if g.role in NORM_ROLES]


def eligible_groups(store: ParameterStore, policy: MaskPolicy) -> list[ParamGroup]:
    """Groups that compete for the k selected coordinates."""
    out = []
    for g in store:
        if g.role in (Role.CLASSIFIER, Role.ADAPTER):
            continue
        if g.role in EMBED_ROLES and not policy.tune_embed:
            continue
        if g.role in NORM_ROLES and policy.tune_norm:
            continue
        out.append(g)
    return out


def allocate(sizes: list[int], k: int, ratio: float | None = None) -> list[int]:
    """
    Split k over groups proportionally: k_g = round(ratio · |g|), the rounding
    residual goes to the largest group (first on ties), clamped to its size.
    """
    total = sum(sizes)
    if not sizes or total == 0:
        return [0] * len(sizes)
    if ratio is None:
        ratio = k / total
    ks = [min(size, round_half_up(ratio * size)) for size in sizes]
    residual = k - sum(ks)
    if residual:
        big = max(range(len(sizes)), key=lambda i: (sizes[i], -i))
        ks[big] = min(sizes[big], max(0, ks[big] + residual))
    return ks


def rank_select(scores: NDArray[np.float64], k: int, selector: Selector,
                rng: np.random.Generator | None = None) -> NDArray[np.uint64]:
    """Sorted flat indices of the k entries a selector picks from scores."""
    n = scores.size
    if k <= 0:
        return np.empty(0, dtype=np.uint64)
    if k >= n:
        return np.arange(n, dtype=np.uint64)
    match selector:
        case Selector.SMALLEST | Selector.FISHER:
            picked = np.argsort(scores, kind="stable")[:k]
        case Selector.LARGEST | Selector.DIFF:
            picked = np.argsort(-scores, kind="stable")[:k]
        case Selector.MIDDLE:
            start = (n - k) // 2
            picked = np.argsort(scores, kind="stable")[start:start + k]
        case Selector.RANDOM:
            if rng is None:
                raise ConfigurationError("random selector needs a seeded generator")
            picked = rng.choice(n, size=k, replace=False)
        case _:
            raise ConfigurationError(f"selector {selector.value!r} is not rank-based")
    return np.sort(picked).astype(np.uint64)


def select_mask(
    store: ParameterStore,
    selector: Selector | str,
    *,
    k: int | None = None,
    sparsity: float | None = None,
    scope: Scope | str = Scope.GROUP_WISE,
    policy: MaskPolicy = MaskPolicy(),
    seed: int = 0,
    scores: Scores = _magnitude,
    provenance: str | None = None,
) -> SparseMask:
    """
    Shared driver behind every score-based mask: works out k from either an
    explicit count or a sparsity, applies the policy, then ranks per group or
    over the concatenated eligible vector.
    """
    selector, scope = Selector(selector), Scope(scope)
    eligible = eligible_groups(store, policy)
    n_eligible = sum(g.size for g in eligible)
    if n_eligible == 0:
        raise ConfigurationError("store has no eligible parameters under this policy")

    if (k is None) == (sparsity is None):
        raise ConfigurationError("give exactly one of k or sparsity")
    if sparsity is not None:
        if not 0.0 < sparsity <= 1.0:
            raise ConfigurationError(f"sparsity must lie in (0, 1], got {sparsity}")
        k = round_half_up(sparsity * n_eligible)
    else:
        if not 0 <= k <= n_eligible:
            raise ConfigurationError(f"k must lie in [0, {n_eligible}], got {k}")
        sparsity = k / n_eligible

    rng = np.random.default_rng(seed) if selector is Selector.RANDOM else None
    picked: dict[str, NDArray[np.uint64]] = {
        g.name: np.arange(g.size, dtype=np.uint64) for g in forced_groups(store, policy)
    }
    if scope is Scope.GROUP_WISE:
        for g, k_g in zip(eligible, allocate([g.size for g in eligible], k, sparsity)):
            picked[g.name] = rank_select(scores(g), k_g, selector, rng)
    else:
        flat = np.concatenate([scores(g) for g in eligible])
        chosen = rank_select(flat, k, selector, rng)
        start = 0
        for g in eligible:
            lo, hi = np.searchsorted(
                chosen, np.array([start, start + g.size], dtype=np.uint64)
            )
            picked[g.name] = chosen[lo:hi] - np.uint64(start)
            start += g.size

    mask = SparseMask(
        [MaskGroup(g.name, g.size, picked.get(g.name, np.empty(0, dtype=np.uint64)))
         for g in store],
        sparsity=sparsity, scope=scope, selector=selector, policy=policy,
        provenance=store.content_hash() if provenance is None else provenance,
        seed=seed,
    )
    log.debug(
        f"{selector.value}/{scope.value} mask: k={k} of {n_eligible} eligible, "
        f"{mask.total_selected} selected incl. forced groups"
    )
    return mask


def pafi_mask(store: ParameterStore, sparsity: float,
              scope: Scope | str = Scope.GROUP_WISE,
              policy: MaskPolicy = MaskPolicy()) -> SparseMask:
    """Bottom-k by |θ|: the task-agnostic mask."""
    return select_mask(store, Selector.SMALLEST, sparsity=sparsity, scope=scope, policy=policy)


def ablation_mask(store: ParameterStore, k: int, selector: Selector | str, seed: int = 0,
                  *, scope: Scope | str = Scope.GROUP_WISE,
                  policy: MaskPolicy = MaskPolicy()) -> SparseMask:
    selector = Selector(selector)
    if selector not in (Selector.LARGEST, Selector.MIDDLE, Selector.RANDOM, Selector.SMALLEST):
        raise ConfigurationError(f"{selector.value!r} is not an ablation selector")
    return select_mask(store, selector, k=k, scope=scope, policy=policy, seed=seed)


def diff_mask(theta0: ParameterStore, theta1: ParameterStore, k: int | None = None,
              policy: MaskPolicy = MaskPolicy(), *,
              sparsity: float | None = None) -> SparseMask:
    """
    Top-k by |θ1 − θ0| over the whole eligible vector. Norm groups compete on
    their change like every other group instead of being forced in, so the
    recorded policy always has tune_norm off.
    """
    check_aligned(theta0, theta1)
    diff = abs_diff(theta1, theta0)
    return select_mask(
        diff, Selector.DIFF, k=k, sparsity=sparsity, scope=Scope.GLOBAL,
        policy=replace(policy, tune_norm=False),
        scores=lambda g: g.tensor.flat(), provenance=theta0.content_hash(),
    )


def fisher_mask(scores: ParameterStore, k: int, policy: MaskPolicy = MaskPolicy(), *,
                scope: Scope | str = Scope.GLOBAL,
                provenance: str | None = None) -> SparseMask:
    """Bottom-k by Fisher score; provenance should name the scored checkpoint."""
    return select_mask(
        scores, Selector.FISHER, k=k, scope=scope, policy=policy,
        scores=lambda g: g.tensor.flat(), provenance=provenance,
    )


# ---------------- mode masks ----------------

MODE_ROLES: dict[str, frozenset[Role]] = {
    "full_ft": frozenset(r for r in Role if r not in (Role.CLASSIFIER, Role.ADAPTER)),
    "linear_ft": frozenset(),
    "linear_ft_norm": NORM_ROLES,
    "bitfit": BIAS_ROLES,
}


def role_mask(store: ParameterStore, roles: Iterable[Role], *,
              mode: str = "", provenance: str | None = None) -> SparseMask:
    """Every coordinate of the groups carrying one of the given roles."""
    wanted = frozenset(roles)
    selected = {g.name: np.arange(g.size, dtype=np.uint64) for g in store if g.role in wanted}
    eligible = store.count(exclude=(Role.CLASSIFIER, Role.ADAPTER))
    n = sum(store[name].size for name in selected)
    kwargs = {} if provenance is None else {"provenance": provenance}
    log.debug(f"role mask {mode or sorted(r.value for r in wanted)}: {n} coordinates")
    return SparseMask.from_indices(
        store, selected, sparsity=(n / eligible if eligible else 0.0),
        scope=Scope.GLOBAL, selector=Selector.ROLE,
        policy=MaskPolicy(tune_norm=NORM_ROLES <= wanted,
                          tune_embed=bool(EMBED_ROLES & wanted)),
        **kwargs,
    )


def mode_mask(store: ParameterStore, mode: str) -> SparseMask:
    try:
        roles = MODE_ROLES[mode]
    except KeyError:
        raise ConfigurationError(
            f"no role mask for mode {mode!r}; expected one of {', '.join(MODE_ROLES)}"
        ) from None
    return role_mask(store, roles, mode=mode)
