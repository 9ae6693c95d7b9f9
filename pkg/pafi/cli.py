# (C) 2026 pafi-hiwi contributors
# SPDX-License-Identifier: AGPL-3.0-or-later

from __future__ import annotations
import argparse, functools, json, sys
from typing import Any

import pafi.log as ops_log
from pafi.accounting import FORMULAS
from pafi.adapters import AdapterKind
from pafi.bench.tasks import KINDS
from pafi.config import get_cfg, reload_cfg
from pafi.log import command_event
from pafi.masks import Scope, Selector
from pafi.numerics.ops import NONLINEARITIES
from pafi.schemas import ErrorRecord
from pafi.trainer import Mode
from pafi import service as svc
from pafi.service import ServiceError


def _dump(out, pretty: bool = True):
    if pretty:
        print(json.dumps(out, ensure_ascii=False, indent=2, sort_keys=True))
    else:
        print(json.dumps(out, ensure_ascii=False, sort_keys=True))


def _fail(code: str, message: str, exit_code: int) -> None:
    rec = ErrorRecord(code=code, error=message, exit_code=exit_code)
    print(rec.model_dump_json(), file=sys.stderr)


def _guarded(fn):
    """ServiceError → error record on stderr; the result carries the exit code."""
    @functools.wraps(fn)
    def wrapper(args):
        try:
            return fn(args)
        except ServiceError as e:
            _fail(e.code, e.message, e.exit_code)
            return {"ok": False, "code": e.code, "exit_code": e.exit_code}
    return wrapper


def _csv(cast):
    def parse(text: str) -> list:
        try:
            return [cast(x) for x in text.split(",") if x.strip()]
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad list {text!r}") from None
    return parse


def _task_overrides(args) -> dict[str, Any]:
    return {
        "task.kind": getattr(args, "task", None),
        "task.seed": getattr(args, "task_seed", None),
    }


def _train_overrides(args) -> dict[str, Any]:
    return {
        "train.seed": getattr(args, "seed", None),
        "train.learning_rate": getattr(args, "lr", None),
        "train.epochs": getattr(args, "epochs", None),
        "train.batch_size": getattr(args, "batch_size", None),
        "train.optimizer": getattr(args, "optimizer", None),
        **_task_overrides(args),
    }


def _start(args, command: str, overrides: dict[str, Any], out: str | None):
    manifest = args.manifest or (svc.run_manifest_path(out) if out else None)
    return svc.start(command, args.argv, overrides=overrides, manifest=manifest)


def _finish(args, run, out: dict[str, Any]) -> dict[str, Any]:
    manifest = run.close()
    if manifest is not None:
        out["manifest"] = str(manifest)
    _dump(out, pretty=not args.compact)
    return out


@command_event("init-model", out="out")
@_guarded
def cmd_init_model(args):
    run = _start(args, "init-model", {f"model.{k}": getattr(args, k)
                                      for k in ("V", "n", "d", "L", "heads", "classes")}, args.out)
    return _finish(args, run, svc.init_model(run, args.out, seed=args.seed))


@command_event("pretrain", out="out")
@_guarded
def cmd_pretrain(args):
    run = _start(args, "pretrain", _train_overrides(args), args.out)
    return _finish(args, run, svc.pretrain(run, args.checkpoint, args.out))


def _mask_overrides(args) -> dict[str, Any]:
    return {
        "mask.sparsity": args.sparsity,
        "mask.scope": args.scope,
        "mask.selector": getattr(args, "selector", None),
        "mask.tune_norm": args.tune_norm,
        "mask.tune_embed": args.tune_embed,
        "mask.seed": getattr(args, "seed", None),
    }


@command_event("gen-mask", selector="selector", out="out")
@_guarded
def cmd_gen_mask(args):
    run = _start(args, "gen-mask", _mask_overrides(args), args.out)
    return _finish(args, run, svc.gen_mask(run, args.checkpoint, args.out, finetuned=args.finetuned))


@command_event("gen-fisher-mask", out="out")
@_guarded
def cmd_gen_fisher_mask(args):
    run = _start(args, "gen-fisher-mask",
                 _mask_overrides(args) | _task_overrides(args) | {"fisher.samples": args.samples},
                 args.out)
    return _finish(args, run, svc.gen_fisher_mask(run, args.checkpoint, args.out))


@command_event("make-task", out="out")
@_guarded
def cmd_make_task(args):
    overrides = _task_overrides(args) | {
        "model.V": args.V, "model.classes": args.classes,
        "task.train_size": args.train_size, "task.dev_size": args.dev_size,
        "task.seq_len": args.seq_len,
    }
    run = _start(args, "make-task", overrides, args.out)
    return _finish(args, run, svc.make_task_tsv(run, args.out))


def _adapter_overrides(args) -> dict[str, Any]:
    return {"adapter.r": getattr(args, "r", None), "adapter.f": getattr(args, "f", None)}


@command_event("train", mode="mode", out="out")
@_guarded
def cmd_train(args):
    run = _start(args, "train", _train_overrides(args) | _adapter_overrides(args), args.out)
    out = svc.train(run, args.checkpoint, args.out, mode=args.mode, mask=args.mask,
                    adapter_kind=args.adapter_kind, report=args.report)
    return _finish(args, run, out)


@command_event("merge", kind="kind", out="out")
@_guarded
def cmd_merge(args):
    run = _start(args, "merge", _adapter_overrides(args), args.out)
    out = svc.merge(run, args.checkpoint, args.adapter_weights, args.out, kind=args.kind, f=args.f)
    return _finish(args, run, out)


@command_event("count-params", format="format")
@_guarded
def cmd_count_params(args):
    dims = {k: getattr(args, k) for k in ("V", "n", "d", "L", "r", "l", "m")}
    run = _start(args, "count-params", {}, args.out)
    out = svc.count_params(run, dims, methods=args.method, fmt=args.format,
                           base_total=args.base_total, out=args.out)
    run.close()
    # the table is the data; JSON rows only in --compact scripting mode
    if args.compact:
        _dump(out["rows"], pretty=False)
    else:
        sys.stdout.write(out["text"])
    return out


@command_event("eval", kind="kind")
@_guarded
def cmd_eval(args):
    run = _start(args, "eval", _task_overrides(args) | _adapter_overrides(args), args.out)
    out = svc.eval_checkpoint(run, args.checkpoint, metric=args.metric,
                              adapter_weights=args.adapter_weights, kind=args.kind, f=args.f,
                              bias_artifact=args.bias_artifact, out=args.out)
    return _finish(args, run, out)


@command_event("grid", mode="mode", jobs="jobs")
@_guarded
def cmd_grid(args):
    axes = {
        "grid.learning_rates": args.lrs, "grid.epochs": args.epochs_list, "grid.seeds": args.seeds,
        "grid.sparsities": args.sparsities, "grid.ranks": args.ranks,
    }
    run = _start(args, "grid", _task_overrides(args) | _adapter_overrides(args) | axes
                 | {"train.batch_size": args.batch_size, "train.optimizer": args.optimizer},
                 args.out)
    out = svc.grid(run, args.checkpoint, args.out, mode=args.mode, learning_rates=args.lrs,
                   epochs=args.epochs_list, seeds=args.seeds, mask=args.mask,
                   adapter_kind=args.adapter_kind, sparsities=args.sparsities or (),
                   ranks=args.ranks or (), jobs=args.jobs)
    return _finish(args, run, out)


@command_event("replay")
@_guarded
def cmd_replay(args):
    manifest = svc.read_manifest(args.manifest_file)
    try:
        again = build_parser().parse_args(manifest.argv)
    except SystemExit:
        raise ServiceError("bad_manifest", "recorded argv no longer parses", svc.EXIT_BAD_ARGS) from None
    again.argv = list(manifest.argv)
    again.compact = True
    # the recorded resolved config stands in for file + env
    get_cfg().replace(data=manifest.config)
    result = again.func(again)
    if not result.get("ok", False):
        return result
    out = svc.compare_outputs(manifest)
    if not out["ok"]:
        raise ServiceError("replay_mismatch",
                           f"outputs differ from the recorded run: {', '.join(out['mismatched'])}", 1)
    _dump({k: v for k, v in out.items() if v is not None}, pretty=not args.compact)
    return out


def _model_dims(p: argparse.ArgumentParser, *, required: bool = False) -> None:
    for k in ("V", "n", "d", "L"):
        p.add_argument(f"--{k}", type=int, required=required)


def _checkpoint_out(p: argparse.ArgumentParser) -> None:
    p.add_argument("--checkpoint", required=True, help="PFRG checkpoint (θ0)")
    p.add_argument("--out", required=True)


def _task_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--task", choices=KINDS, help="synthetic task kind")
    p.add_argument("--task-seed", dest="task_seed", type=int)


def _train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--optimizer", choices=["sgd", "adam"])


def _mask_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--sparsity", type=float)
    p.add_argument("--scope", choices=[s.value for s in Scope])
    p.add_argument("--tune-norm", dest="tune_norm", action=argparse.BooleanOptionalAction,
                   help="Fine-tune every normalization parameter (default: on)")
    p.add_argument("--tune-embed", dest="tune_embed", action=argparse.BooleanOptionalAction,
                   help="Let token/position embeddings be selected (default: off)")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="paficli")
    p.add_argument(
        "--compact",
        action="store_true",
        help="Emit compact JSON for scripting",
    )
    sub = p.add_subparsers(dest="cmd", required=True)
    runtime = argparse.ArgumentParser(add_help=False)
    runtime.add_argument("--config", help="Explicit config YAML path")
    runtime.add_argument("--manifest", help="RunManifest path (default: <out>.run.json)")

    kinds = [k.value for k in AdapterKind]

    p_init = sub.add_parser("init-model", parents=[runtime])
    p_init.add_argument("--out", required=True)
    p_init.add_argument("--seed", type=int, default=0)
    _model_dims(p_init)
    p_init.add_argument("--heads", type=int)
    p_init.add_argument("--classes", type=int)
    p_init.set_defaults(func=cmd_init_model)

    p_pre = sub.add_parser("pretrain", parents=[runtime])
    _checkpoint_out(p_pre)
    _task_flags(p_pre)
    _train_flags(p_pre)
    p_pre.set_defaults(func=cmd_pretrain)

    p_mask = sub.add_parser(
        "gen-mask",
        parents=[runtime],
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=(
            "examples:\n"
            "  paficli gen-mask --checkpoint base.pfrg --out base.pfmk\n"
            "  paficli gen-mask --checkpoint base.pfrg --selector diff \\\n"
            "    --finetuned tuned.pfrg --out diff.pfmk"
        ),
    )
    _checkpoint_out(p_mask)
    _mask_flags(p_mask)
    p_mask.add_argument("--selector", choices=[s.value for s in Selector])
    p_mask.add_argument("--seed", type=int)
    p_mask.add_argument("--finetuned", help="θ1 checkpoint for --selector diff")
    p_mask.set_defaults(func=cmd_gen_mask)

    p_fisher = sub.add_parser("gen-fisher-mask", parents=[runtime])
    _checkpoint_out(p_fisher)
    _mask_flags(p_fisher)
    _task_flags(p_fisher)
    p_fisher.add_argument("--samples", type=int)
    p_fisher.set_defaults(func=cmd_gen_fisher_mask)

    p_task = sub.add_parser("make-task", parents=[runtime])
    p_task.add_argument("--out", required=True, help="TSV destination")
    _task_flags(p_task)
    p_task.add_argument("--V", type=int)
    p_task.add_argument("--classes", type=int)
    p_task.add_argument("--train-size", dest="train_size", type=int)
    p_task.add_argument("--dev-size", dest="dev_size", type=int)
    p_task.add_argument("--seq-len", dest="seq_len", type=int)
    p_task.set_defaults(func=cmd_make_task)

    p_train = sub.add_parser("train", parents=[runtime])
    _checkpoint_out(p_train)
    p_train.add_argument("--mode", required=True, choices=[m.value for m in Mode])
    p_train.add_argument("--mask", help="PFMK mask (pafi mode)")
    p_train.add_argument("--adapter-kind", dest="adapter_kind", choices=kinds)
    p_train.add_argument("--r", type=int)
    p_train.add_argument("--f", choices=list(NONLINEARITIES))
    p_train.add_argument("--report", help="JSONL report (default: <out stem>.report.jsonl)")
    _task_flags(p_train)
    _train_flags(p_train)
    p_train.set_defaults(func=cmd_train)

    p_merge = sub.add_parser("merge", parents=[runtime])
    _checkpoint_out(p_merge)
    p_merge.add_argument("--adapter-weights", dest="adapter_weights", required=True)
    p_merge.add_argument("--kind", required=True, choices=kinds)
    p_merge.add_argument("--f", choices=list(NONLINEARITIES))
    p_merge.set_defaults(func=cmd_merge)

    p_count = sub.add_parser("count-params", parents=[runtime])
    p_count.add_argument("--method", action="append", choices=list(FORMULAS),
                         help="Repeatable; default all methods")
    _model_dims(p_count)
    for k in ("r", "l", "m"):
        p_count.add_argument(f"--{k}", type=int)
    p_count.add_argument("--format", choices=["tsv", "pretty"], default="tsv")
    p_count.add_argument("--base-total", dest="base_total", type=int,
                         help="Percentages against this total instead of full_ft #tuned")
    p_count.add_argument("--out", help="Also write the table here")
    p_count.set_defaults(func=cmd_count_params)

    p_eval = sub.add_parser("eval", parents=[runtime])
    p_eval.add_argument("--checkpoint", required=True)
    _task_flags(p_eval)
    p_eval.add_argument("--metric", choices=["accuracy", "pearson"])
    p_eval.add_argument("--adapter-weights", dest="adapter_weights")
    p_eval.add_argument("--kind", choices=kinds)
    p_eval.add_argument("--f", choices=list(NONLINEARITIES))
    p_eval.add_argument("--bias-artifact", dest="bias_artifact",
                        help="Merged-bias artifact to overlay on the checkpoint")
    p_eval.add_argument("--out", help="Also write the JSON record here")
    p_eval.set_defaults(func=cmd_eval)

    p_replay = sub.add_parser("replay", parents=[runtime])
    p_replay.add_argument("manifest_file")
    p_replay.set_defaults(func=cmd_replay)

    p_grid = sub.add_parser("grid", parents=[runtime])
    _checkpoint_out(p_grid)
    p_grid.add_argument("--mode", required=True, choices=[m.value for m in Mode])
    p_grid.add_argument("--mask")
    p_grid.add_argument("--adapter-kind", dest="adapter_kind", choices=kinds)
    p_grid.add_argument("--r", type=int)
    p_grid.add_argument("--f", choices=list(NONLINEARITIES))
    p_grid.add_argument("--lrs", type=_csv(float), required=True, help="e.g. 3e-3,1e-2")
    p_grid.add_argument("--epochs-list", dest="epochs_list", type=_csv(int), required=True)
    p_grid.add_argument("--seeds", type=_csv(int), default=[0])
    p_grid.add_argument("--sparsities", type=_csv(float),
                        help="pafi mode: one smallest-magnitude mask per value, e.g. 0.005,0.05")
    p_grid.add_argument("--ranks", type=_csv(int), help="adapter mode: bottleneck sizes, e.g. 1,4,16")
    p_grid.add_argument("--batch-size", dest="batch_size", type=int)
    p_grid.add_argument("--optimizer", choices=["sgd", "adam"])
    p_grid.add_argument("--jobs", type=int, default=1)
    _task_flags(p_grid)
    p_grid.set_defaults(func=cmd_grid)

    return p


def main_cli(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    args.argv = argv
    if args.config:
        reload_cfg(args.config)
    ops_log.configure(get_cfg().get("log.ops_log"))
    try:
        result = args.func(args)
    finally:
        ops_log.close()
    if isinstance(result, dict) and not result.get("ok", True):
        return int(result.get("exit_code", 1))
    return 0


if __name__ == "__main__":
    raise SystemExit(main_cli())
