# (C) 2026 pafi-hiwi contributors
# SPDX-License-Identifier: AGPL-3.0-or-later

import json

import pytest

import pafi.log as ops_log
from pafi.log import ReportWriter, command_event


@pytest.fixture(autouse=True)
def reset():
    """Reset ops_log singleton state before and after each test."""
    ops_log.configure(None)
    yield
    ops_log.configure(None)


def test_emit_noop_when_not_configured(capsys):
    ops_log.emit(op="train", mode="pafi", latency_ms=1.0, status="ok")
    assert capsys.readouterr().out == ""


def test_configure_stdout_emits_json(capsys):
    ops_log.configure("stdout")
    ops_log.emit(op="gen-mask", selector="smallest", out="m.pfmk",
                 latency_ms=12.5, status="ok")
    data = json.loads(capsys.readouterr().out.strip())
    assert data["op"] == "gen-mask"
    assert data["selector"] == "smallest"
    assert data["out"] == "m.pfmk"
    assert data["status"] == "ok"
    assert "ts" in data


def test_none_fields_dropped(capsys):
    ops_log.configure("stdout")
    ops_log.emit(op="train", mode="bitfit", latency_ms=5.0, status="ok", error_code=None)
    data = json.loads(capsys.readouterr().out.strip())
    assert "error_code" not in data
    assert data["mode"] == "bitfit"


def test_configure_null_string_disables(capsys):
    ops_log.configure("stdout")
    ops_log.configure("null")
    ops_log.emit(op="train", latency_ms=1.0, status="ok")
    assert capsys.readouterr().out == ""


def test_configure_file_multiple_lines(tmp_path):
    path = tmp_path / "ops.jsonl"
    ops_log.configure(str(path))
    ops_log.emit(op="init-model", latency_ms=10.0, status="ok")
    ops_log.emit(op="train", latency_ms=50.0, status="ok")
    ops_log.close()
    lines = path.read_text().strip().splitlines()
    assert [json.loads(x)["op"] for x in lines] == ["init-model", "train"]


def test_ts_format(capsys):
    ops_log.configure("stdout")
    ops_log.emit(op="eval", latency_ms=1.0, status="ok")
    ts = json.loads(capsys.readouterr().out.strip())["ts"]
    # ISO 8601 UTC with millisecond precision: "2026-02-26T23:55:55.123Z"
    assert ts.endswith("Z")
    assert len(ts) == 24


def test_close_noop_when_not_configured():
    ops_log.close()  # must not raise


def test_reconfigure_closes_previous_file(tmp_path):
    p1 = tmp_path / "first.jsonl"
    p2 = tmp_path / "second.jsonl"
    ops_log.configure(str(p1))
    ops_log.emit(op="train", latency_ms=1.0, status="ok")
    ops_log.configure(str(p2))
    ops_log.emit(op="merge", latency_ms=2.0, status="ok")
    ops_log.close()
    assert len(p1.read_text().strip().splitlines()) == 1
    assert len(p2.read_text().strip().splitlines()) == 1


class _Args:
    mode = "pafi"


def test_command_event_reports_exit_codes(capsys):
    ops_log.configure("stdout")

    @command_event("train", mode="mode", extra=lambda args, rc: rc * 10)
    def failing(args):
        return 2

    assert failing(_Args()) == 2
    data = json.loads(capsys.readouterr().out.strip())
    assert data["status"] == "error"
    assert data["error_code"] == "exit_2"
    assert data["mode"] == "pafi"
    assert data["extra"] == 20


def test_command_event_records_raised_errors(capsys):
    ops_log.configure("stdout")

    @command_event("eval")
    def boom(args):
        raise RuntimeError("x")

    with pytest.raises(RuntimeError):
        boom(_Args())
    assert json.loads(capsys.readouterr().out.strip())["status"] == "error"


def test_report_writer_is_deterministic(tmp_path):
    records = [{"epoch": 1, "loss": 0.5, "warning": None}, {"b": 2, "a": 1}]
    paths = [tmp_path / "a.jsonl", tmp_path / "b.jsonl"]
    for p in paths:
        with ReportWriter(p) as rw:
            for rec in records:
                rw.write(rec)
    assert paths[0].read_bytes() == paths[1].read_bytes()
    lines = paths[0].read_text().splitlines()
    assert lines == ['{"epoch":1,"loss":0.5}', '{"a":1,"b":2}']


def test_report_writer_without_path_is_silent():
    with ReportWriter(None) as rw:
        rw.write({"epoch": 1})
