# (C) 2026 pafi-hiwi contributors
# SPDX-License-Identifier: AGPL-3.0-or-later
from __future__ import annotations
import time, threading
from collections import deque
from contextlib import contextmanager
from typing import Any

_started = time.time()
_lock = threading.Lock()

_COUNTERS = (
    "runs_total",
    "epochs_total",
    "steps_total",
    "masked_updates_total",
    "backward_passes_total",
    "errors_total",
)
_counters: dict[str, float] = {k: 0.0 for k in _COUNTERS}

_last_error: str | None = None

# Latency tracking: keep last N samples per operation type
_LATENCY_WINDOW = 1000
_latencies: dict[str, deque] = {}


def reset() -> dict[str, Any]:
    """Reset all counters; called at the start of every CLI run."""
    global _counters, _last_error, _started
    with _lock:
        _counters = {k: 0.0 for k in _COUNTERS}
        _last_error = None
        _latencies.clear()
        _started = time.time()
    return {"ok": True}

def inc(name: str, value: float = 1.0):
    with _lock:
        _counters[name] = _counters.get(name, 0.0) + value

def set_error(msg: str):
    global _last_error
    with _lock:
        _last_error = msg
        _counters["errors_total"] = _counters.get("errors_total", 0.0) + 1.0

def record_latency(op: str, duration_ms: float):
    with _lock:
        if op not in _latencies:
            _latencies[op] = deque(maxlen=_LATENCY_WINDOW)
        _latencies[op].append(duration_ms)

@contextmanager
def timed(op: str):
    """Context manager to time an operation and record its latency."""
    start = time.perf_counter()
    try:
        yield
    finally:
        record_latency(op, (time.perf_counter() - start) * 1000)

def _percentile(data: list[float], p: float) -> float:
    """Compute the p-th percentile of a sorted list."""
    if not data:
        return 0.0
    k = (len(data) - 1) * p / 100
    f = int(k)
    c = f + 1 if f + 1 < len(data) else f
    return data[f] + (k - f) * (data[c] - data[f])

def latency_summary(op: str) -> dict[str, float]:
    """Return p50, p95, total and count for an operation type."""
    with _lock:
        samples = list(_latencies.get(op, []))
    if not samples:
        return {"p50": 0.0, "p95": 0.0, "total": 0.0, "count": 0}
    total = sum(samples)
    samples.sort()
    return {
        "p50": round(_percentile(samples, 50), 3),
        "p95": round(_percentile(samples, 95), 3),
        "total": round(total, 3),
        "count": len(samples),
    }

def snapshot(extra: dict[str, Any] | None = None) -> dict[str, Any]:
    with _lock:
        data: dict[str, Any] = dict(_counters)
        data.update({
            "uptime_seconds": round(time.time() - _started, 3),
            "last_error": _last_error,
        })
        ops = sorted(_latencies)
    for op in ops:
        data[f"{op}_latency_ms"] = latency_summary(op)
    if extra:
        data.update(extra)
    return data
