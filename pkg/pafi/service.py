# (C) 2026 pafi-hiwi contributors
# SPDX-License-Identifier: AGPL-3.0-or-later

from __future__ import annotations

import csv
import hashlib
import itertools
import json
import time
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from copy import deepcopy
from dataclasses import dataclass, field
from pathlib import Path
from collections.abc import Iterator, Sequence
from typing import Any

from pafi import __version__, metrics
from pafi.accounting import ModelDims, count_all, to_pretty, to_tsv
from pafi.adapters import (
    AdapterKind,
    AdapterSpec,
    AdapterWeights,
    hiwi_bias_artifact,
    merge_into,
    overlay,
)
from pafi.bench import (
    SyntheticTask,
    TaskData,
    ToyModel,
    ToyModelConfig,
    dump_task_tsv,
    evaluate,
    init_params,
    make_task,
)
from pafi.config import get_cfg
from pafi.errors import (
    CheckpointError,
    FrozenViolationError,
    MaskFormatError,
    PafiError,
    ProvenanceMismatchError,
)
from pafi.log import ReportWriter, get_logger
from pafi.masks import (
    MaskPolicy,
    Selector,
    SparseMask,
    deserialize_mask,
    diff_mask,
    fisher_scores,
    select_mask,
    serialize_mask,
)
from pafi.schemas import EvalRecord, RunManifest, dump_json
from pafi.stores import ParameterStore, load_checkpoint, save_checkpoint
from pafi.trainer import Mode, TrainConfig, pretrain as run_pretrain, train as run_train

log = get_logger()

EXIT_FAILED = 1
EXIT_BAD_ARGS = 2
EXIT_LOAD = 3
EXIT_WRITE = 4
EXIT_FROZEN = 5


class ServiceError(RuntimeError):
    def __init__(self, code: str, message: str, exit_code: int = EXIT_FAILED):
        super().__init__(message)
        self.code = code
        self.message = message
        self.exit_code = exit_code


def exit_code_for(e: PafiError) -> int:
    """Fixed exit-code contract for library errors reaching the command boundary."""
    if isinstance(e, FrozenViolationError):
        return EXIT_FROZEN
    if isinstance(e, ProvenanceMismatchError):
        return EXIT_BAD_ARGS
    if isinstance(e, (CheckpointError, MaskFormatError)):
        return EXIT_LOAD
    if e.code == "training_diverged":
        return EXIT_FAILED
    return EXIT_BAD_ARGS


def file_sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def run_manifest_path(out: str | Path) -> Path:
    """Default RunManifest location next to a command's primary output."""
    p = Path(out)
    return p.with_name(p.name + ".run.json")


def sibling(out: str | Path, tag: str) -> Path:
    """`run.pfrg` → `run.<tag>.pfrg`"""
    p = Path(out)
    return p.with_name(f"{p.stem}.{tag}{p.suffix or '.pfrg'}")


def resolve_config(overrides: dict[str, Any] | None = None) -> dict[str, Any]:
    """Config snapshot with flag values (dotted paths) laid on top."""
    data = get_cfg().snapshot()
    for path, value in (overrides or {}).items():
        if value is None:
            continue
        cur = data
        parts = path.split(".")
        for p in parts[:-1]:
            cur = cur.setdefault(p, {})
        cur[parts[-1]] = value
    return data


# ---------------- run bookkeeping ----------------

@dataclass
class Run:
    """One command invocation: resolved config, digests in and out, manifest target."""
    command: str
    argv: list[str]
    cfg: dict[str, Any]
    manifest: Path | None = None
    seed: int | None = None
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)
    t0: float = field(default_factory=time.perf_counter)

    def section(self, name: str) -> dict[str, Any]:
        return deepcopy(self.cfg.get(name) or {})

    def read(self, path: str | Path) -> Path:
        p = Path(path)
        try:
            self.inputs[str(p)] = file_sha256(p)
        except OSError as e:
            raise ServiceError("load_failed", f"cannot read {p}: {e.strerror or e}", EXIT_LOAD) from None
        return p

    def wrote(self, path: str | Path, digest: str | None = None) -> str:
        digest = digest or file_sha256(path)
        self.outputs[str(path)] = digest
        return digest

    def close(self) -> Path | None:
        if self.manifest is None:
            return None
        record = RunManifest(
            command=self.command, argv=self.argv, version=__version__, seed=self.seed,
            config=self.cfg, inputs=self.inputs, outputs=self.outputs,
            wall_clock_s=round(time.perf_counter() - self.t0, 6),
            counters=metrics.snapshot(),
        )
        with writing(self.manifest):
            self.manifest.parent.mkdir(parents=True, exist_ok=True)
            self.manifest.write_text(dump_json(record, indent=2) + "\n", encoding="utf-8")
        return self.manifest


def start(command: str, argv: Sequence[str], *, overrides: dict[str, Any] | None = None,
          manifest: str | Path | None = None) -> Run:
    metrics.reset()
    return Run(command, list(argv), resolve_config(overrides),
               Path(manifest) if manifest else None)


@contextmanager
def boundary(command: str) -> Iterator[None]:
    """Maps library errors onto ServiceError with the fixed exit codes."""
    try:
        yield
    except ServiceError as e:
        metrics.set_error(e.message)
        raise
    except PafiError as e:
        metrics.set_error(e.message)
        log.info(f"{command} rejected: {e.message}")
        raise ServiceError(e.code, e.message, exit_code_for(e)) from None


@contextmanager
def writing(path: str | Path) -> Iterator[None]:
    try:
        yield
    except OSError as e:
        raise ServiceError("write_failed", f"cannot write {path}: {e.strerror or e}", EXIT_WRITE) from None


def load_store(run: Run, path: str | Path) -> ParameterStore:
    p = run.read(path)
    try:
        return load_checkpoint(p, heads=int(run.cfg["model"]["heads"]))
    except OSError as e:
        raise ServiceError("load_failed", f"cannot read {p}: {e}", EXIT_LOAD) from None
    except CheckpointError as e:
        raise ServiceError(e.code, f"{p}: {e.message}", EXIT_LOAD) from None


def load_mask(run: Run, path: str | Path) -> SparseMask:
    p = run.read(path)
    try:
        return deserialize_mask(p)
    except OSError as e:
        raise ServiceError("load_failed", f"cannot read {p}: {e}", EXIT_LOAD) from None
    except MaskFormatError as e:
        raise ServiceError(e.code, f"{p}: {e.message}", EXIT_LOAD) from None


def save_store(run: Run, store: ParameterStore, path: str | Path) -> str:
    with writing(path):
        digest = save_checkpoint(store, path, precision=run.cfg["checkpoint"]["precision"])
    return run.wrote(path, digest)


def _model_config(store: ParameterStore) -> ToyModelConfig:
    if store.meta is None:
        raise ServiceError("no_model_meta", "checkpoint does not describe a full model", EXIT_LOAD)
    return ToyModelConfig.from_meta(store.meta)


def _task(run: Run, config: ToyModelConfig) -> TaskData:
    spec = SyntheticTask.from_cfg(run.section("task"), V=config.V, classes=config.classes)
    if spec.out_dim != config.classes:
        raise ServiceError(
            "task_mismatch",
            f"{spec.kind} task needs a {spec.out_dim}-wide classifier, checkpoint has {config.classes}",
            EXIT_BAD_ARGS,
        )
    return make_task(spec)


def _policy(section: dict[str, Any]) -> MaskPolicy:
    return MaskPolicy(tune_norm=bool(section["tune_norm"]), tune_embed=bool(section["tune_embed"]))


def _adapter_spec(section: dict[str, Any], kind: str | None = None) -> AdapterSpec:
    return AdapterSpec(
        kind=kind or section["kind"], r=int(section["r"]), f=section["f"],
        lora_scale=float(section.get("lora_scale", 1.0)),
        attention_targets=bool(section.get("attention_targets", False)),
    )


def _train_config(run: Run, mode: str, mask: SparseMask | None,
                  adapter: AdapterSpec | None) -> TrainConfig:
    return TrainConfig.from_cfg(run.section("train"), mode=mode, mask=mask, adapter=adapter)


# ---------------- commands ----------------

def init_model(run: Run, out: str | Path, *, seed: int = 0) -> dict[str, Any]:
    with boundary(run.command):
        run.seed = seed
        config = ToyModelConfig.from_cfg(run.section("model"))
        store = init_params(config, seed)
        digest = save_store(run, store, out)
        log.info(f"init-model: {store.total} params → {out}")
        return {"ok": True, "checkpoint": str(out), "sha256": digest, "params": store.total}


def pretrain(run: Run, checkpoint: str | Path, out: str | Path) -> dict[str, Any]:
    with boundary(run.command):
        theta = load_store(run, checkpoint)
        config = _model_config(theta)
        task = _task(run, config)
        tc = _train_config(run, Mode.FULL_FT.value, None, None)
        run.seed = tc.seed
        with metrics.timed("pretrain"):
            theta0 = run_pretrain(ToyModel(config, theta, task_kind=task.kind), task, tc)
        digest = save_store(run, theta0, out)
        return {"ok": True, "checkpoint": str(out), "sha256": digest}


def gen_mask(run: Run, checkpoint: str | Path, out: str | Path, *,
             finetuned: str | Path | None = None) -> dict[str, Any]:
    """Task-free mask from a checkpoint (and, for the diff selector, its fine-tuned twin)."""
    with boundary(run.command):
        section = run.section("mask")
        selector = Selector(section["selector"])
        policy = _policy(section)
        sparsity = float(section["sparsity"])
        run.seed = int(section.get("seed") or 0)
        theta = load_store(run, checkpoint)
        if selector is Selector.FISHER:
            raise ServiceError("bad_selector", "fisher masks need data; use gen-fisher-mask",
                               EXIT_BAD_ARGS)
        if selector is Selector.ROLE:
            raise ServiceError("bad_selector", "role masks are derived from the training mode",
                               EXIT_BAD_ARGS)
        if (selector is Selector.DIFF) != (finetuned is not None):
            raise ServiceError("bad_selector", "--finetuned goes with --selector diff and only with it",
                               EXIT_BAD_ARGS)
        with metrics.timed("gen_mask"):
            if selector is Selector.DIFF:
                theta1 = load_store(run, finetuned)
                if not 0.0 < sparsity <= 1.0:
                    raise ServiceError("invalid_config",
                                       f"sparsity must lie in (0, 1], got {sparsity}", EXIT_BAD_ARGS)
                mask = diff_mask(theta, theta1, policy=policy, sparsity=sparsity)
            else:
                mask = select_mask(theta, selector, sparsity=sparsity, scope=section["scope"],
                                   policy=policy, seed=run.seed)
        with writing(out):
            digest = serialize_mask(mask, out)
        run.wrote(out, digest)
        log.info(f"gen-mask: {mask.total_selected} of {mask.total_size} coordinates → {out}")
        return {"ok": True, "mask": str(out), "sha256": digest,
                "selected": mask.total_selected, "sparsity": mask.sparsity}


def gen_fisher_mask(run: Run, checkpoint: str | Path, out: str | Path, *,
                    samples: int | None = None) -> dict[str, Any]:
    with boundary(run.command):
        section = run.section("mask")
        sparsity = float(section["sparsity"])
        n = int(samples or run.section("fisher")["samples"])
        theta = load_store(run, checkpoint)
        config = _model_config(theta)
        task = _task(run, config)
        run.seed = task.spec.seed
        with metrics.timed("fisher"):
            scores = fisher_scores(ToyModel(config, theta, task_kind=task.kind),
                                   task.train.samples(), n)
        mask = select_mask(scores, Selector.FISHER, sparsity=sparsity, scope=section["scope"],
                           policy=_policy(section), scores=lambda g: g.tensor.flat(),
                           provenance=theta.content_hash())
        with writing(out):
            digest = serialize_mask(mask, out)
        run.wrote(out, digest)
        return {"ok": True, "mask": str(out), "sha256": digest,
                "selected": mask.total_selected, "samples": n}


def make_task_tsv(run: Run, out: str | Path) -> dict[str, Any]:
    with boundary(run.command):
        model = run.section("model")
        spec = SyntheticTask.from_cfg(run.section("task"), V=int(model["V"]),
                                      classes=int(model["classes"]))
        run.seed = spec.seed
        task = make_task(spec)
        with writing(out):
            dump_task_tsv(task, out)
        digest = run.wrote(out)
        return {"ok": True, "task": str(out), "sha256": digest,
                "train": len(task.train), "dev": len(task.dev)}


def train(run: Run, checkpoint: str | Path, out: str | Path, *, mode: str,
          mask: str | Path | None = None, adapter_kind: str | None = None,
          report: str | Path | None = None) -> dict[str, Any]:
    """
    Fine-tune θ0 under a mode. Writes the tuned θ, the JSONL report and, for
    adapter modes, δ (`<out>.adapter.pfrg`); HiWi-bias runs also write the
    merged-bias deliverable (`<out>.bias.pfrg`).
    """
    with boundary(run.command):
        if adapter_kind is not None and mode != Mode.ADAPTER.value:
            raise ServiceError("mode_mismatch", f"--adapter-kind needs --mode adapter, got {mode}",
                               EXIT_BAD_ARGS)
        if mask is not None and mode != Mode.PAFI.value:
            raise ServiceError("mode_mismatch", f"--mask needs --mode pafi, got {mode}", EXIT_BAD_ARGS)
        if mode == Mode.PAFI.value and mask is None:
            raise ServiceError("mode_mismatch", "pafi mode needs --mask", EXIT_BAD_ARGS)
        theta = load_store(run, checkpoint)
        m = load_mask(run, mask) if mask is not None else None
        spec = (_adapter_spec(run.section("adapter"), adapter_kind)
                if mode == Mode.ADAPTER.value else None)
        tc = _train_config(run, mode, m, spec)
        run.seed = tc.seed
        config = _model_config(theta)
        task = _task(run, config)
        report_path = Path(report) if report else sibling(out, "report").with_suffix(".jsonl")

        with writing(report_path), ReportWriter(report_path) as rw:
            with metrics.timed("train"):
                result = run_train(ToyModel(config, theta, task_kind=task.kind), task, tc, report=rw)
            digest = save_store(run, result.params, out)
            rw.write(result.report.summary(digest).model_dump(exclude_none=True))
        run.wrote(report_path)

        outputs = {"checkpoint": str(out), "sha256": digest, "report": str(report_path)}
        if result.adapter is not None:
            delta_path = sibling(out, "adapter")
            save_store(run, result.adapter.to_store(), delta_path)
            outputs["adapter"] = str(delta_path)
            if spec.kind is AdapterKind.HIWI_BIAS:
                bias_path = sibling(out, "bias")
                save_store(run, hiwi_bias_artifact(result.params, result.adapter), bias_path)
                outputs["bias"] = str(bias_path)
        summary = result.report.summary(digest)
        return {"ok": True, **outputs, "metric": summary.metric, "value": summary.value,
                "updated_params": summary.updated_params,
                "trainable_params": summary.trainable_params}


def merge(run: Run, checkpoint: str | Path, adapter_weights: str | Path, out: str | Path, *,
          kind: str, f: str | None = None) -> dict[str, Any]:
    with boundary(run.command):
        theta = load_store(run, checkpoint)
        delta = load_store(run, adapter_weights)
        spec = _adapter_spec(run.section("adapter") | ({"f": f} if f else {}), kind)
        if not spec.mergeable:
            raise ServiceError("not_mergeable", f"{spec.kind.value} adapters cannot be merged",
                               EXIT_BAD_ARGS)
        weights = AdapterWeights.from_store(spec, delta)
        merged = merge_into(theta, weights)
        digest = save_store(run, merged, out)
        return {"ok": True, "checkpoint": str(out), "sha256": digest, "kind": spec.kind.value}


def _eval_model(run: Run, checkpoint: str | Path, *, adapter_weights: str | Path | None,
                kind: str | None, f: str | None,
                bias_artifact: str | Path | None) -> tuple[ToyModel, TaskData]:
    theta = load_store(run, checkpoint)
    config = _model_config(theta)
    task = _task(run, config)
    if bias_artifact is not None:
        theta = overlay(theta, load_store(run, bias_artifact))
    if adapter_weights is None:
        return ToyModel(config, theta, task_kind=task.kind), task
    if kind is None:
        raise ServiceError("mode_mismatch", "--adapter-weights needs --kind", EXIT_BAD_ARGS)
    spec = _adapter_spec(run.section("adapter") | ({"f": f} if f else {}), kind)
    weights = AdapterWeights.from_store(spec, load_store(run, adapter_weights))
    phi = theta.union(weights.to_store())
    return ToyModel(config, phi, task_kind=task.kind, adapter=spec), task


def eval_checkpoint(run: Run, checkpoint: str | Path, *, metric: str | None = None,
                    adapter_weights: str | Path | None = None, kind: str | None = None,
                    f: str | None = None, bias_artifact: str | Path | None = None,
                    out: str | Path | None = None) -> dict[str, Any]:
    with boundary(run.command):
        model, task = _eval_model(run, checkpoint, adapter_weights=adapter_weights,
                                  kind=kind, f=f, bias_artifact=bias_artifact)
        run.seed = task.spec.seed
        with metrics.timed("eval"):
            result = evaluate(model, task, metric=metric)
        record = EvalRecord(
            checkpoint=str(checkpoint), checkpoint_sha256=run.inputs[str(Path(checkpoint))],
            task_kind=task.kind, metric=result.name, value=result.value,
            warning=result.warning, examples=len(task.dev),
        )
        if out is not None:
            with writing(out):
                Path(out).parent.mkdir(parents=True, exist_ok=True)
                Path(out).write_text(dump_json(record) + "\n", encoding="utf-8")
            run.wrote(out)
        return {"ok": True, **record.model_dump(exclude_none=True)}


def count_params(run: Run, dims: dict[str, int | None], *, methods: Sequence[str] | None = None,
                 fmt: str = "tsv", base_total: int | None = None,
                 out: str | Path | None = None) -> dict[str, Any]:
    with boundary(run.command):
        reports = count_all(ModelDims(**dims), methods, base_total=base_total)
        text = to_tsv(reports) if fmt == "tsv" else to_pretty(reports)
        if out is not None:
            with writing(out):
                Path(out).parent.mkdir(parents=True, exist_ok=True)
                Path(out).write_text(text, encoding="utf-8")
            run.wrote(out)
        return {"ok": True, "rows": [r.as_row() for r in reports], "text": text}


# ---------------- replay ----------------

def read_manifest(path: str | Path) -> RunManifest:
    p = Path(path)
    try:
        return RunManifest.model_validate(json.loads(p.read_text(encoding="utf-8")))
    except OSError as e:
        raise ServiceError("load_failed", f"cannot read {p}: {e}", EXIT_LOAD) from None
    except ValueError as e:
        raise ServiceError("bad_manifest", f"{p} is not a run manifest: {e}", EXIT_LOAD) from None


def compare_outputs(manifest: RunManifest) -> dict[str, Any]:
    """Re-hash a manifest's outputs and report which ones changed."""
    mismatched = []
    for path, expected in sorted(manifest.outputs.items()):
        try:
            actual = file_sha256(path)
        except OSError:
            actual = None
        if actual != expected:
            mismatched.append(path)
    return {"ok": not mismatched, "code": "replay_mismatch" if mismatched else None,
            "command": manifest.command, "checked": len(manifest.outputs),
            "mismatched": mismatched}


# ---------------- grid ----------------

def _grid_job(cfg: dict[str, Any], checkpoint: str, mask: str | None, mode: str,
              adapter_kind: str | None, lr: float, epochs: int, seed: int,
              sparsity: float | None = None, r: int | None = None) -> dict[str, Any]:
    """
    One sweep point; runs in a worker process with the parent's resolved
    config. A sparsity builds a smallest-magnitude mask from the checkpoint
    with the configured scope and policy; r overrides the adapter rank.
    """
    get_cfg().replace(data=cfg)
    row: dict[str, Any] = {"learning_rate": lr, "epochs": epochs, "seed": seed,
                           "sparsity": sparsity, "r": r}
    try:
        theta = load_checkpoint(checkpoint, heads=int(cfg["model"]["heads"]))
        if sparsity is not None:
            section = cfg["mask"]
            m = select_mask(theta, Selector.SMALLEST, sparsity=sparsity, scope=section["scope"],
                            policy=_policy(section))
        else:
            m = deserialize_mask(mask) if mask else None
        spec = None
        if mode == Mode.ADAPTER.value:
            spec = _adapter_spec(cfg["adapter"] | ({"r": r} if r is not None else {}), adapter_kind)
        tc = TrainConfig.from_cfg(cfg["train"], mode=mode, mask=m, adapter=spec,
                                  learning_rate=lr, epochs=epochs, seed=seed)
        config = ToyModelConfig.from_meta(theta.meta)
        task = make_task(SyntheticTask.from_cfg(cfg["task"], V=config.V, classes=config.classes))
        result = run_train(ToyModel(config, theta, task_kind=task.kind), task, tc)
    except PafiError as e:
        return row | {"error": e.code, "message": e.message, "exit_code": exit_code_for(e)}
    rep = result.report
    return row | {
        "sparsity": m.sparsity if m is not None else sparsity,
        "r": spec.r if spec is not None else r,
        "tuned_params": rep.trainable_params,
        "metric": rep.final_metric.name, "value": rep.final_metric.value,
        "final_loss": rep.losses[-1] if rep.epochs else None,
        "params_sha256": result.params.content_hash(),
    }


GRID_COLUMNS = ("sparsity", "r", "learning_rate", "epochs", "seed", "tuned_params",
                "metric", "value", "final_loss", "params_sha256")


def _grid_axis(mode: str, mask: str | Path | None, sparsities: Sequence[float],
               ranks: Sequence[int]) -> list[tuple[float | None, int | None]]:
    if sparsities and ranks:
        raise ServiceError("invalid_config", "--sparsities and --ranks cannot be combined",
                           EXIT_BAD_ARGS)
    if sparsities:
        if mode != Mode.PAFI.value:
            raise ServiceError("mode_mismatch", f"--sparsities needs --mode pafi, got {mode}",
                               EXIT_BAD_ARGS)
        if mask is not None:
            raise ServiceError("invalid_config", "--sparsities builds its own masks; drop --mask",
                               EXIT_BAD_ARGS)
        bad = [s for s in sparsities if not 0.0 < s <= 1.0]
        if bad:
            raise ServiceError("invalid_config", f"sparsity must lie in (0, 1], got {bad[0]}",
                               EXIT_BAD_ARGS)
        return [(float(s), None) for s in sparsities]
    if ranks:
        if mode != Mode.ADAPTER.value:
            raise ServiceError("mode_mismatch", f"--ranks needs --mode adapter, got {mode}",
                               EXIT_BAD_ARGS)
        bad = [r for r in ranks if r < 1]
        if bad:
            raise ServiceError("invalid_config", f"rank must be positive, got {bad[0]}",
                               EXIT_BAD_ARGS)
        return [(None, int(r)) for r in ranks]
    return [(None, None)]


def grid(run: Run, checkpoint: str | Path, out: str | Path, *, mode: str,
         learning_rates: Sequence[float], epochs: Sequence[int], seeds: Sequence[int],
         mask: str | Path | None = None, adapter_kind: str | None = None,
         sparsities: Sequence[float] = (), ranks: Sequence[int] = (),
         jobs: int = 1) -> dict[str, Any]:
    """
    (sparsity | r) × lr × epochs × seed sweep; each point is an independent
    training run, and every row records how many parameters it tuned.
    """
    with boundary(run.command):
        if jobs < 1:
            raise ServiceError("invalid_config", f"--jobs must be positive, got {jobs}", EXIT_BAD_ARGS)
        axis = _grid_axis(mode, mask, sparsities, ranks)
        theta = load_store(run, checkpoint)
        _model_config(theta)
        if mask is not None:
            load_mask(run, mask)
        if not learning_rates or not epochs or not seeds:
            raise ServiceError("invalid_config", "empty grid", EXIT_BAD_ARGS)
        points = list(itertools.product(axis, learning_rates, epochs, seeds))
        args = [(run.cfg, str(checkpoint), str(mask) if mask else None, mode, adapter_kind,
                 float(lr), int(ep), int(sd), sp, r) for (sp, r), lr, ep, sd in points]
        log.info(f"grid: {len(points)} runs on {jobs} worker(s)")
        with metrics.timed("grid"):
            if jobs == 1:
                rows = [_grid_job(*a) for a in args]
            else:
                with ProcessPoolExecutor(max_workers=jobs) as pool:
                    rows = list(pool.map(_grid_job, *zip(*args)))
        failed = [r for r in rows if "error" in r]
        if failed:
            first = failed[0]
            where = " ".join(f"{k}={first[k]}" for k in ("sparsity", "r", "learning_rate",
                                                          "epochs", "seed")
                             if first.get(k) is not None)
            raise ServiceError(first["error"], f"grid point {where}: {first['message']}",
                               first["exit_code"])
        with writing(out):
            Path(out).parent.mkdir(parents=True, exist_ok=True)
            with Path(out).open("w", encoding="utf-8", newline="") as fh:
                w = csv.writer(fh, delimiter="\t", lineterminator="\n")
                w.writerow(GRID_COLUMNS)
                for r in rows:
                    w.writerow(["" if r.get(c) is None else r[c] for c in GRID_COLUMNS])
        digest = run.wrote(out)
        best = max(rows, key=lambda r: r["value"])
        return {"ok": True, "table": str(out), "sha256": digest, "runs": len(rows),
                "best": {k: best[k] for k in ("sparsity", "r", "learning_rate", "epochs",
                                              "seed", "tuned_params", "value")}}
