# (C) 2026 pafi-hiwi contributors
# SPDX-License-Identifier: AGPL-3.0-or-later

from .base import AdapterKind, AdapterSpec, AdapterWeights, Bottleneck
from .ops import (
    LoraGap,
    adapter_forward,
    demonstrate_lora_inequality,
    hiwi_bias_merge,
    hiwi_weight_merge,
    lora_forward,
    lora_merge,
    rank_of,
)
from .attach import (
    AdapterHooks,
    build_adapter,
    effective_params,
    hiwi_bias_artifact,
    merge_into,
    overlay,
    sites_of,
    theta_groups,
    wire,
)

__all__ = [
    "AdapterHooks",
    "AdapterKind",
    "AdapterSpec",
    "AdapterWeights",
    "Bottleneck",
    "LoraGap",
    "adapter_forward",
    "build_adapter",
    "demonstrate_lora_inequality",
    "effective_params",
    "hiwi_bias_artifact",
    "hiwi_bias_merge",
    "hiwi_weight_merge",
    "lora_forward",
    "lora_merge",
    "merge_into",
    "overlay",
    "rank_of",
    "sites_of",
    "theta_groups",
    "wire",
]
