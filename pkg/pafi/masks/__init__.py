# (C) 2026 pafi-hiwi contributors
# SPDX-License-Identifier: AGPL-3.0-or-later

from .base import MaskGroup, MaskPolicy, Scope, Selector, SparseMask
from .select import (
    ablation_mask,
    allocate,
    diff_mask,
    eligible_groups,
    fisher_mask,
    mode_mask,
    pafi_mask,
    rank_select,
    role_mask,
    round_half_up,
    select_mask,
)
from .fisher import GradientSource, fisher_scores
from .pfmk import decode_mask, deserialize_mask, encode_mask, serialize_mask

__all__ = [
    "GradientSource",
    "MaskGroup",
    "MaskPolicy",
    "Scope",
    "Selector",
    "SparseMask",
    "ablation_mask",
    "allocate",
    "decode_mask",
    "deserialize_mask",
    "diff_mask",
    "eligible_groups",
    "encode_mask",
    "fisher_mask",
    "fisher_scores",
    "mode_mask",
    "pafi_mask",
    "rank_select",
    "role_mask",
    "round_half_up",
    "select_mask",
    "serialize_mask",
]
