# (C) 2026 pafi-hiwi contributors
# SPDX-License-Identifier: AGPL-3.0-or-later

"""
Trainable (#tuned) versus persisted (#stored) parameter counts per method
for an encoder-only model. The task classifier is never counted.
"""

from __future__ import annotations

import csv
import io
from collections.abc import Callable, Iterable
from dataclasses import dataclass, asdict

from pafi.errors import ConfigurationError
from pafi.stores import ParameterStore, Role


@dataclass(frozen=True)
class ModelDims:
    V: int | None = None
    n: int | None = None
    d: int | None = None
    L: int | None = None
    r: int | None = None
    l: int | None = None  # noqa: E741  prefix length
    m: int | None = None

    def __post_init__(self) -> None:
        for k, v in asdict(self).items():
            if v is not None and int(v) < 1:
                raise ConfigurationError(f"dimension {k} must be a positive integer, got {v}")

    def need(self, *symbols: str) -> tuple[int, ...]:
        missing = [s for s in symbols if getattr(self, s) is None]
        if missing:
            raise ConfigurationError(f"missing dimension(s): {', '.join(missing)}")
        return tuple(int(getattr(self, s)) for s in symbols)


@dataclass(frozen=True)
class CountReport:
    method: str
    tuned: int
    stored: int
    tuned_pct: float
    stored_pct: float

    def as_row(self) -> dict[str, object]:
        return asdict(self)


def _full_ft(x: ModelDims) -> tuple[int, int]:
    V, n, d, L = x.need("V", "n", "d", "L")
    t = (V + 2 + n) * d + (12 * d * d + 13 * d) * L
    return t, t


def _linear_ft_norm(x: ModelDims) -> tuple[int, int]:
    d, L = x.need("d", "L")
    t = 2 * d + 4 * d * L
    return t, t


def _bitfit(x: ModelDims) -> tuple[int, int]:
    d, L = x.need("d", "L")
    t = d + 11 * d * L
    return t, t


def _adapter(x: ModelDims) -> tuple[int, int]:
    d, L, r = x.need("d", "L", "r")
    t = (4 * d * r + 2 * r + 6 * d) * L
    return t, t


def _pfeiffer(x: ModelDims) -> tuple[int, int]:
    d, L, r = x.need("d", "L", "r")
    t = (2 * d * r + r + d) * L
    return t, t


def _lora(x: ModelDims) -> tuple[int, int]:
    d, L, r = x.need("d", "L", "r")
    t = 4 * d * r * L
    return t, t


def _prefix(x: ModelDims) -> tuple[int, int]:
    d, L, l, m = x.need("d", "L", "l", "m")
    return l * d + d * m + m + (2 * m * d + 2 * d) * L, 2 * l * d * L


def _mam(x: ModelDims) -> tuple[int, int]:
    d, L, r, l, m = x.need("d", "L", "r", "l", "m")
    tuned = l * d + d * m + m + (2 * d * r + r + 3 * d + 2 * m * d) * L
    return tuned, (2 * d * r + r + d + 2 * l * d) * L


def _hiwi_bias(x: ModelDims) -> tuple[int, int]:
    d, L, r = x.need("d", "L", "r")
    return (18 * d * r + 3 * r + 5 * d) * L, 5 * d * L


def _hiwi_weight(x: ModelDims) -> tuple[int, int]:
    d, L, r = x.need("d", "L", "r")
    t = (18 * d * r + 3 * r + 5 * d) * L
    return t, t


FORMULAS: dict[str, Callable[[ModelDims], tuple[int, int]]] = {
    "full_ft": _full_ft,
    "linear_ft_norm": _linear_ft_norm,
    "bitfit": _bitfit,
    "adapter": _adapter,
    "pfeiffer_adapter": _pfeiffer,
    "lora": _lora,
    "prefix_tuning": _prefix,
    "mam_adapter": _mam,
    "hiwi_bias": _hiwi_bias,
    "hiwi_weight": _hiwi_weight,
}

# Methods with a forward path in the toy bench, hence an enumeration oracle.
ENUMERABLE = ("full_ft", "linear_ft_norm", "bitfit", "adapter", "pfeiffer_adapter",
              "lora", "hiwi_bias", "hiwi_weight")


def count(method: str, dims: ModelDims, *, base_total: int | None = None) -> CountReport:
    """
    Closed-form counts. Percentages are against full_ft #tuned, or against
    base_total when given (e.g. a published model size).
    """
    try:
        formula = FORMULAS[method]
    except KeyError:
        raise ConfigurationError(
            f"unknown method {method!r}; expected one of {', '.join(FORMULAS)}"
        ) from None
    tuned, stored = formula(dims)
    base = base_total if base_total is not None else _full_ft(dims)[0]
    return CountReport(
        method=method, tuned=tuned, stored=stored,
        tuned_pct=100.0 * tuned / base, stored_pct=100.0 * stored / base,
    )


def count_all(dims: ModelDims, methods: Iterable[str] | None = None, *,
              base_total: int | None = None) -> list[CountReport]:
    return [count(m, dims, base_total=base_total) for m in (methods or FORMULAS)]


def enumerate_tuned(store: ParameterStore, mode: str, *, r: int | None = None,
                    mask=None, seed: int = 0) -> int:
    """
    Parameters the trainer would actually mark trainable, classifier
    excluded. `mode` is a training mode (full_ft, linear_ft, linear_ft_norm,
    bitfit, pafi) or an adapter kind; pafi needs the mask, adapter kinds r.
    """
    # imported here: the trainer pulls in the whole bench
    from pafi.adapters import AdapterKind, AdapterSpec, build_adapter
    from pafi.trainer import Mode, TrainConfig, training_mask

    if mode in {k.value for k in AdapterKind}:
        if r is None:
            raise ConfigurationError(f"{mode} needs the bottleneck r")
        spec = AdapterSpec(kind=mode, r=r)
        config = TrainConfig(mode=Mode.ADAPTER, adapter=spec)
        delta = build_adapter(spec, store, seed)
    else:
        config = TrainConfig(mode=mode, mask=mask)
        delta = None
    phi, mask = training_mask(store, config, delta)
    return sum(mg.count for mg in mask if phi[mg.name].role is not Role.CLASSIFIER)


def to_tsv(reports: Iterable[CountReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, delimiter="\t", lineterminator="\n")
    w.writerow(["method", "tuned", "stored", "tuned_pct", "stored_pct"])
    for rep in reports:
        w.writerow([rep.method, rep.tuned, rep.stored,
                    f"{rep.tuned_pct:.4f}", f"{rep.stored_pct:.4f}"])
    return buf.getvalue()


def to_pretty(reports: Iterable[CountReport]) -> str:
    rows = [("method", "#tuned", "#stored", "tuned %", "stored %")]
    rows += [
        (rep.method, f"{rep.tuned:,}", f"{rep.stored:,}",
         f"{rep.tuned_pct:.3f}%", f"{rep.stored_pct:.3f}%")
        for rep in reports
    ]
    widths = [max(len(row[i]) for row in rows) for i in range(5)]
    lines = []
    for j, row in enumerate(rows):
        cells = [row[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(row[1:], widths[1:])]
        lines.append("  ".join(cells))
        if j == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"
