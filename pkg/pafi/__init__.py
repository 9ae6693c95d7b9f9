# (C) 2026 pafi-hiwi contributors
# SPDX-License-Identifier: AGPL-3.0-or-later
__version__ = "0.1.0"
__all__ = [
    "config", "errors", "log", "metrics", "numerics", "stores", "masks",
    "adapters", "bench", "optim", "trainer", "accounting", "schemas",
    "service", "cli",
]
