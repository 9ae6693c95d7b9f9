# (C) 2026 pafi-hiwi contributors
# SPDX-License-Identifier: AGPL-3.0-or-later

import json
import struct
import subprocess
import sys
import zlib
from pathlib import Path

import pytest

from pafi.cli import main_cli
from pafi.config import get_cfg, reload_cfg
from pafi.stores import load_checkpoint

MODEL = ["--V", "20", "--n", "8", "--d", "4", "--L", "1"]


@pytest.fixture
def cli_env(tmp_path, monkeypatch):
    """Small task and short runs so every command finishes quickly."""
    for key, value in {
        "PAFI_TASK__TRAIN_SIZE": "48",
        "PAFI_TASK__DEV_SIZE": "24",
        "PAFI_TASK__SEQ_LEN": "6",
        "PAFI_TRAIN__EPOCHS": "2",
        "PAFI_TRAIN__BATCH_SIZE": "16",
    }.items():
        monkeypatch.setenv(key, value)
    reload_cfg()
    return tmp_path


def _run(capsys, *argv) -> tuple[int, dict | None]:
    rc = main_cli(["--compact", *argv])
    out = capsys.readouterr().out.strip()
    return rc, (json.loads(out.splitlines()[-1]) if out else None)


@pytest.fixture
def base(cli_env, capsys):
    path = cli_env / "base.pfrg"
    rc, out = _run(capsys, "init-model", "--out", str(path), *MODEL)
    assert rc == 0 and out["ok"]
    return path


def test_init_model_writes_checkpoint_and_manifest(base):
    theta = load_checkpoint(base)
    assert theta.meta.d == 4 and theta.meta.L == 1
    assert Path(str(base) + ".json").is_file()
    manifest = json.loads(Path(str(base) + ".run.json").read_text())
    assert manifest["command"] == "init-model"
    assert manifest["config"]["model"]["V"] == 20
    assert list(manifest["outputs"]) == [str(base)]


def test_gen_mask_is_deterministic(base, capsys):
    hashes = []
    for name in ("a.pfmk", "b.pfmk"):
        rc, out = _run(capsys, "gen-mask", "--checkpoint", str(base),
                       "--out", str(base.parent / name), "--sparsity", "0.1")
        assert rc == 0
        hashes.append(out["sha256"])
    assert hashes[0] == hashes[1]
    assert (base.parent / "a.pfmk").read_bytes() == (base.parent / "b.pfmk").read_bytes()


def test_bad_sparsity_exits_2_with_error_record(base, capsys):
    rc = main_cli(["gen-mask", "--checkpoint", str(base),
                   "--out", str(base.parent / "m.pfmk"), "--sparsity", "1.5"])
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert rc == 2
    assert err["ok"] is False and err["exit_code"] == 2
    assert not (base.parent / "m.pfmk").exists()


def test_missing_checkpoint_exits_3(cli_env, capsys):
    rc = main_cli(["gen-mask", "--checkpoint", str(cli_env / "nope.pfrg"),
                   "--out", str(cli_env / "m.pfmk")])
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert rc == 3
    assert err["code"] == "load_failed"


def test_pafi_mode_needs_a_mask(base, capsys):
    rc = main_cli(["train", "--checkpoint", str(base), "--out", str(base.parent / "t.pfrg"),
                   "--mode", "pafi"])
    assert rc == 2
    assert "needs --mask" in capsys.readouterr().err


def test_train_in_pafi_mode_is_deterministic(base, capsys):
    mask = base.parent / "m.pfmk"
    assert _run(capsys, "gen-mask", "--checkpoint", str(base), "--out", str(mask),
                "--sparsity", "0.1")[0] == 0
    results = []
    for name in ("t1.pfrg", "t2.pfrg"):
        rc, out = _run(capsys, "train", "--checkpoint", str(base), "--out", str(base.parent / name),
                       "--mode", "pafi", "--mask", str(mask))
        assert rc == 0
        results.append(out)
    assert results[0]["sha256"] == results[1]["sha256"]
    report = Path(results[0]["report"])
    assert report.name == "t1.report.jsonl"
    assert report.read_bytes() == Path(results[1]["report"]).read_bytes()
    lines = [json.loads(x) for x in report.read_text().splitlines()]
    assert lines[-1]["type"] == "summary"
    assert results[0]["updated_params"] <= results[0]["trainable_params"]


def test_hiwi_bias_artifact_size_does_not_depend_on_r(base, capsys):
    sizes = {}
    for r in (4, 16):
        out_path = base.parent / f"h{r}.pfrg"
        rc, out = _run(capsys, "train", "--checkpoint", str(base), "--out", str(out_path),
                       "--mode", "adapter", "--adapter-kind", "hiwi_bias", "--r", str(r),
                       "--epochs", "1")
        assert rc == 0
        assert out["bias"] == str(base.parent / f"h{r}.bias.pfrg")
        sizes[r] = (Path(out["bias"]).stat().st_size, Path(out["adapter"]).stat().st_size)
    assert sizes[4][0] == sizes[16][0]
    assert sizes[4][1] < sizes[16][1]


def test_merge_of_untrained_lora_is_bit_equal(base, capsys):
    tuned = base.parent / "l.pfrg"
    rc, out = _run(capsys, "train", "--checkpoint", str(base), "--out", str(tuned),
                   "--mode", "adapter", "--adapter-kind", "lora", "--r", "2", "--epochs", "0")
    assert rc == 0
    merged = base.parent / "merged.pfrg"
    rc, out = _run(capsys, "merge", "--checkpoint", str(base), "--adapter-weights", out["adapter"],
                   "--kind", "lora", "--out", str(merged))
    assert rc == 0
    assert load_checkpoint(merged).bit_equal(load_checkpoint(base))


def test_merge_rejects_bottleneck_adapters(base, capsys):
    tuned = base.parent / "a.pfrg"
    rc, out = _run(capsys, "train", "--checkpoint", str(base), "--out", str(tuned),
                   "--mode", "adapter", "--adapter-kind", "adapter", "--r", "2", "--epochs", "0")
    assert rc == 0
    rc = main_cli(["merge", "--checkpoint", str(base), "--adapter-weights", out["adapter"],
                   "--kind", "adapter", "--out", str(base.parent / "m.pfrg")])
    assert rc == 2


def test_eval_with_bias_overlay(base, capsys):
    rc, out = _run(capsys, "train", "--checkpoint", str(base), "--out", str(base.parent / "h.pfrg"),
                   "--mode", "adapter", "--adapter-kind", "hiwi_bias", "--r", "2", "--epochs", "1")
    assert rc == 0
    rc, plain = _run(capsys, "eval", "--checkpoint", str(base))
    assert rc == 0 and plain["metric"] == "accuracy"
    rc, merged = _run(capsys, "eval", "--checkpoint", str(base), "--bias-artifact", out["bias"])
    assert rc == 0 and merged["examples"] == 24
    # eval writes no manifest unless asked
    assert sorted(p.name for p in base.parent.glob("*.run.json")) == [
        "base.pfrg.run.json", "h.pfrg.run.json"]


def test_replay_reproduces_outputs(base, capsys):
    tuned = base.parent / "r.pfrg"
    rc, _ = _run(capsys, "train", "--checkpoint", str(base), "--out", str(tuned),
                 "--mode", "bitfit", "--epochs", "1", "--seed", "3")
    assert rc == 0
    manifest = Path(str(tuned) + ".run.json")
    recorded = json.loads(manifest.read_text())
    assert recorded["seed"] == 3
    # ambient config must not leak into the replay
    get_cfg().set("train.learning_rate", 0.5)
    rc, out = _run(capsys, "replay", str(manifest))
    assert rc == 0
    assert out["ok"] and out["mismatched"] == []
    assert out["checked"] == len(recorded["outputs"])


def test_replay_of_garbage_exits_3(cli_env, capsys):
    bad = cli_env / "x.run.json"
    bad.write_text("{\"command\": 1}")
    assert main_cli(["replay", str(bad)]) == 3


def test_count_params_table(cli_env, capsys):
    rc = main_cli(["count-params", "--method", "bitfit", "--method", "hiwi_bias",
                   "--V", "50", "--n", "16", "--d", "8", "--L", "2", "--r", "4"])
    lines = capsys.readouterr().out.splitlines()
    assert rc == 0
    assert lines[0].split("\t")[:3] == ["method", "tuned", "stored"]
    hiwi = lines[2].split("\t")
    assert hiwi[0] == "hiwi_bias" and hiwi[2] == "80"


def test_count_params_missing_rank_exits_2(cli_env, capsys):
    rc = main_cli(["count-params", "--method", "lora", "--d", "8", "--L", "2"])
    assert rc == 2
    err = capsys.readouterr().err.strip().splitlines()[-1]
    assert json.loads(err)["code"] == "invalid_config"


def test_make_task_tsv(cli_env, capsys):
    path = cli_env / "task.tsv"
    rc, out = _run(capsys, "make-task", "--out", str(path), "--V", "20")
    assert rc == 0
    assert out["train"] == 48 and out["dev"] == 24
    assert path.read_text().splitlines()[0] == "split\tid\tlabel\ttokens"


def _table(path):
    header, *rows = [line.split("\t") for line in path.read_text().splitlines()]
    return [dict(zip(header, r)) for r in rows], header


def test_grid_table(base, capsys):
    table = base.parent / "grid.tsv"
    rc, out = _run(capsys, "grid", "--checkpoint", str(base), "--out", str(table),
                   "--mode", "linear_ft", "--lrs", "0.01,0.05", "--epochs-list", "1")
    assert rc == 0
    assert out["runs"] == 2
    rows, header = _table(table)
    assert header[:3] == ["sparsity", "r", "learning_rate"]
    assert [r["learning_rate"] for r in rows] == ["0.01", "0.05"]
    assert all(r["sparsity"] == "" and r["r"] == "" for r in rows)


def test_grid_sweeps_sparsity_levels(base, capsys):
    table = base.parent / "sparsity.tsv"
    rc, out = _run(capsys, "grid", "--checkpoint", str(base), "--out", str(table),
                   "--mode", "pafi", "--sparsities", "0.05,0.5", "--lrs", "0.01",
                   "--epochs-list", "1")
    assert rc == 0 and out["runs"] == 2
    rows, _ = _table(table)
    assert [float(r["sparsity"]) for r in rows] == pytest.approx([0.05, 0.5], abs=0.01)
    assert int(rows[0]["tuned_params"]) < int(rows[1]["tuned_params"])
    manifest = json.loads(Path(out["manifest"]).read_text())
    assert manifest["config"]["grid"]["sparsities"] == [0.05, 0.5]


def test_grid_sweeps_adapter_ranks(base, capsys):
    table = base.parent / "ranks.tsv"
    rc, out = _run(capsys, "grid", "--checkpoint", str(base), "--out", str(table),
                   "--mode", "adapter", "--adapter-kind", "hiwi_weight", "--ranks", "1,4",
                   "--lrs", "0.01", "--epochs-list", "1")
    assert rc == 0
    rows, _ = _table(table)
    assert [r["r"] for r in rows] == ["1", "4"]
    assert int(rows[0]["tuned_params"]) < int(rows[1]["tuned_params"])
    assert json.loads(Path(out["manifest"]).read_text())["config"]["grid"]["ranks"] == [1, 4]


def test_grid_axis_needs_the_matching_mode(base, capsys):
    table = base.parent / "bad.tsv"
    rc = main_cli(["grid", "--checkpoint", str(base), "--out", str(table),
                   "--mode", "bitfit", "--ranks", "2", "--lrs", "0.01", "--epochs-list", "1"])
    assert rc == 2
    assert json.loads(capsys.readouterr().err.strip().splitlines()[-1])["code"] == "mode_mismatch"
    assert not table.exists()


def test_ops_log_lines(base, capsys, tmp_path, monkeypatch):
    ops = tmp_path / "ops.jsonl"
    monkeypatch.setenv("PAFI_LOG__OPS_LOG", str(ops))
    reload_cfg()
    rc = main_cli(["gen-mask", "--checkpoint", str(base), "--out", str(tmp_path / "m.pfmk"),
                   "--sparsity", "0.1", "--selector", "largest"])
    assert rc == 0
    line = json.loads(ops.read_text().strip())
    assert line["op"] == "gen-mask"
    assert line["selector"] == "largest"
    assert line["status"] == "ok"


def test_pretrain_then_fisher_mask(base, capsys):
    theta0 = base.parent / "theta0.pfrg"
    rc, out = _run(capsys, "pretrain", "--checkpoint", str(base), "--out", str(theta0),
                   "--epochs", "1")
    assert rc == 0
    assert not load_checkpoint(theta0).bit_equal(load_checkpoint(base))
    mask = base.parent / "fisher.pfmk"
    rc, out = _run(capsys, "gen-fisher-mask", "--checkpoint", str(theta0), "--out", str(mask),
                   "--samples", "4", "--sparsity", "0.1")
    assert rc == 0
    assert out["samples"] == 4 and out["selected"] > 0
    rc, out = _run(capsys, "train", "--checkpoint", str(theta0), "--out", str(base.parent / "f.pfrg"),
                   "--mode", "pafi", "--mask", str(mask), "--epochs", "1")
    assert rc == 0


def test_gen_mask_refuses_data_driven_selectors(base, capsys):
    rc = main_cli(["gen-mask", "--checkpoint", str(base), "--out", str(base.parent / "m.pfmk"),
                   "--selector", "fisher"])
    assert rc == 2
    rc = main_cli(["gen-mask", "--checkpoint", str(base), "--out", str(base.parent / "m.pfmk"),
                   "--selector", "diff"])
    assert rc == 2


@pytest.mark.parametrize("module", ["pafi.cli", "pafi.log", "pafi.config", "pafi.service"])
def test_modules_import_in_a_fresh_interpreter(module):
    root = Path(__file__).resolve().parents[1]
    done = subprocess.run(
        [sys.executable, "-c", f"import {module}"],
        cwd=root, capture_output=True, text=True,
    )
    assert done.returncode == 0, done.stderr


def test_help_lists_the_program(capsys):
    with pytest.raises(SystemExit) as exc:
        main_cli(["--help"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    assert "paficli" in out
    assert "gen-mask" in out


def test_tampered_inputs_exit_3(base, capsys):
    manifest = Path(str(base) + ".json")
    good = manifest.read_text()
    manifest.write_text(json.dumps({"groups": [{"name": "x"}]}))
    rc = main_cli(["gen-mask", "--checkpoint", str(base), "--out", str(base.parent / "m.pfmk")])
    assert rc == 3
    assert json.loads(capsys.readouterr().err.strip().splitlines()[-1])["exit_code"] == 3
    manifest.write_text(good)

    mask = base.parent / "m.pfmk"
    assert _run(capsys, "gen-mask", "--checkpoint", str(base), "--out", str(mask))[0] == 0
    data = mask.read_bytes()
    # count field of the first group → 2**62, resealed with a valid checksum
    name_len = struct.unpack_from("<H", data, 61)[0]
    at = 61 + 2 + name_len + 8
    body = data[:at] + struct.pack("<Q", 2**62) + data[at + 8:-4]
    mask.write_bytes(body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF))
    rc = main_cli(["train", "--checkpoint", str(base), "--out", str(base.parent / "t.pfrg"),
                   "--mode", "pafi", "--mask", str(mask)])
    assert rc == 3
    assert not (base.parent / "t.pfrg").exists()
