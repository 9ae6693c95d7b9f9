# (C) 2026 pafi-hiwi contributors
# SPDX-License-Identifier: AGPL-3.0-or-later

from .tensor import Tensor, as_tensor, allow_nonfinite
from .graph import Graph, Node, Var, backward, gradients_by_name
from .gradcheck import finite_difference, relative_error
from . import ops

__all__ = [
    "Graph",
    "Node",
    "Tensor",
    "Var",
    "allow_nonfinite",
    "as_tensor",
    "backward",
    "finite_difference",
    "gradients_by_name",
    "ops",
    "relative_error",
]
