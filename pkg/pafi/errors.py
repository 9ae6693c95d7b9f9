# (C) 2026 pafi-hiwi contributors
# SPDX-License-Identifier: AGPL-3.0-or-later

"""Exception hierarchy shared by every pafi module."""

from __future__ import annotations

from collections.abc import Iterable


class PafiError(RuntimeError):
    """Root of all toolkit errors; `code` is a stable machine-readable tag."""

    code = "pafi_error"

    def __init__(self, message: str, *, code: str | None = None):
        super().__init__(message)
        self.message = message
        if code is not None:
            self.code = code


class DimensionError(PafiError, ValueError):
    code = "dimension_mismatch"


class ConfigurationError(PafiError, ValueError):
    code = "invalid_config"


class ContractError(PafiError):
    code = "contract_violation"


class NumericError(PafiError, ArithmeticError):
    code = "non_finite"


class AlignmentError(PafiError, ValueError):
    """Two stores (or a store and a mask) disagree on names or shapes."""

    code = "misaligned"

    def __init__(self, message: str, groups: Iterable[str] = ()):
        self.groups = sorted(set(groups))
        if self.groups:
            message = f"{message}: {', '.join(self.groups)}"
        super().__init__(message)


# ---- checkpoint container ----

class CheckpointError(PafiError):
    code = "checkpoint_error"


class CorruptHeaderError(CheckpointError):
    code = "corrupt_header"


class CorruptPayloadError(CheckpointError):
    code = "corrupt_payload"


class ShapeMetaMismatchError(CheckpointError):
    code = "shape_meta_mismatch"


class DuplicateNameError(CheckpointError):
    code = "duplicate_name"


# ---- mask container ----

class MaskFormatError(PafiError):
    code = "mask_format"


class MaskVersionError(MaskFormatError):
    code = "mask_version"


class MaskChecksumError(MaskFormatError):
    code = "mask_checksum"


class ProvenanceMismatchError(MaskFormatError):
    code = "mask_provenance"


# ---- training ----

class TrainingError(PafiError):
    code = "training_diverged"

    def __init__(self, message: str, *, epoch: int | None = None):
        super().__init__(message)
        self.epoch = epoch


class FrozenViolationError(PafiError):
    code = "frozen_violation"

    def __init__(self, violations: int):
        super().__init__(f"{violations} frozen coordinate(s) changed")
        self.violations = violations
