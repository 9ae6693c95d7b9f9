# (C) 2026 pafi-hiwi contributors
# SPDX-License-Identifier: AGPL-3.0-or-later

from pafi import metrics


def test_counters_start_at_zero_and_move():
    snap = metrics.snapshot()
    assert snap["steps_total"] == 0.0
    assert snap["last_error"] is None
    metrics.inc("steps_total")
    metrics.inc("masked_updates_total", 7)
    snap = metrics.snapshot()
    assert snap["steps_total"] == 1.0
    assert snap["masked_updates_total"] == 7.0
    assert "uptime_seconds" in snap


def test_set_error_counts():
    metrics.set_error("boom")
    snap = metrics.snapshot()
    assert snap["last_error"] == "boom"
    assert snap["errors_total"] == 1.0


def test_latency_percentiles_in_snapshot():
    for ms in (1.0, 2.0, 3.0, 4.0):
        metrics.record_latency("train", ms)
    with metrics.timed("eval"):
        pass
    snap = metrics.snapshot()
    assert snap["train_latency_ms"]["count"] == 4
    assert snap["train_latency_ms"]["p50"] == 2.5
    assert snap["train_latency_ms"]["total"] == 10.0
    assert snap["eval_latency_ms"]["count"] == 1


def test_reset_clears_everything():
    metrics.inc("runs_total")
    metrics.record_latency("train", 1.0)
    metrics.reset()
    snap = metrics.snapshot()
    assert snap["runs_total"] == 0.0
    assert "train_latency_ms" not in snap
    assert metrics.latency_summary("train")["count"] == 0
