# (C) 2026 pafi-hiwi contributors
# SPDX-License-Identifier: AGPL-3.0-or-later

from .base import (
    BIAS_ROLES,
    EMBED_ROLES,
    NORM_ROLES,
    ModelMeta,
    ParameterStore,
    ParamGroup,
    Role,
    abs_diff,
    check_aligned,
)
from .pfrg import decode_store, encode_store, load_checkpoint, manifest_path, save_checkpoint

__all__ = [
    "BIAS_ROLES",
    "EMBED_ROLES",
    "NORM_ROLES",
    "ModelMeta",
    "ParameterStore",
    "ParamGroup",
    "Role",
    "abs_diff",
    "check_aligned",
    "decode_store",
    "encode_store",
    "load_checkpoint",
    "manifest_path",
    "save_checkpoint",
]
