"""Pipeline driver: every stage and the full loop as subcommands.

Each subcommand prints one machine-parseable `key=value ...` summary line on
success and exits nonzero on stage errors (2 for usage/config problems).
"""

import argparse
import os
import sys

import numpy as np

from . import pipeline as pl
from .config import (PROFILES, PipelineConfig, load_config, resolve_out_dir,
                     save_config, serialize_config)
from .errors import PrefloopError
from .policy import PolicyCheckpoint
from .reward_model import RewardModel
from .trajectories import load_trajectories, pair_sampler, save_preferences

USAGE_EXIT = 2
STAGE_EXIT = 1


def _summary(**kv):
    print(" ".join(f"{k}={v}" for k, v in kv.items()))


def _load_cfg(args) -> PipelineConfig:
    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = PROFILES[args.profile]()
    if args.seed is not None:
        cfg.seed = args.seed
    if getattr(args, "tasks", None):
        cfg.train_tasks = [t.strip() for t in args.tasks.split(",") if t.strip()]
        cfg.__post_init__()
    if getattr(args, "labeler", None):
        cfg.labeler = args.labeler
        cfg.__post_init__()
    return cfg


def cmd_train_diverse(args) -> int:
    cfg = _load_cfg(args)
    out_dir = resolve_out_dir(args.out, cfg)
    total = 0
    for task in cfg.train_tasks:
        kept, finals = pl.stage_train_base(cfg, task)
        pl.save_checkpoints(out_dir, "base", task, finals)
        pl.save_checkpoints(out_dir, "base-kept", task, kept)
        total += len(kept)
    save_config(cfg, os.path.join(out_dir, "config.toml"))
    _summary(stage="train-diverse", tasks=",".join(cfg.train_tasks),
             kept_checkpoints=total, out=out_dir)
    return 0


def _checkpoints_for(out_dir, label, task):
    root = os.path.join(out_dir, "checkpoints", label, task)
    if not os.path.isdir(root):
        raise PrefloopError(f"no checkpoints under {root}; run train-diverse first")
    return [PolicyCheckpoint.from_file(os.path.join(root, name))
            for name in sorted(os.listdir(root)) if name.endswith(".json")]


def cmd_collect(args) -> int:
    cfg = _load_cfg(args)
    out_dir = resolve_out_dir(args.out, cfg)
    k = args.iteration
    label = "base-kept" if k == 1 else f"iter{k - 1}"
    n = 0
    for task in cfg.train_tasks:
        ckpts = _checkpoints_for(out_dir, label, task)
        path = os.path.join(out_dir, "data", f"iter{k}", "trajectories",
                            f"{task}.jsonl")
        trajs = pl.stage_record(cfg, task, ckpts, k, out_path=path)
        n += len(trajs)
    _summary(stage="collect", iteration=k, trajectories=n, out=out_dir)
    return 0


def cmd_label_oracle(args) -> int:
    cfg = _load_cfg(args)
    out_dir = resolve_out_dir(args.out, cfg)
    k = args.iteration
    records = []
    for task in cfg.train_tasks:
        path = os.path.join(out_dir, "data", f"iter{k}", "trajectories",
                            f"{task}.jsonl")
        trajs = load_trajectories(path)
        records.extend(pl.stage_label_oracle(cfg, task, trajs, k))
    pref_path = os.path.join(out_dir, "data", f"iter{k}", "preferences.jsonl")
    save_preferences(pref_path, records)
    decisive = sum(1 for r in records if r.verdict.value != "NOT_SURE")
    _summary(stage="label-oracle", iteration=k, records=len(records),
             decisive=decisive, path=pref_path)
    return 0


def cmd_serve_labeler(args) -> int:
    import uvicorn
    from .label_service import LabelService, build_app
    cfg = _load_cfg(args)
    out_dir = resolve_out_dir(args.out, cfg)
    k = args.iteration
    trajectories = []
    for task in cfg.train_tasks:
        path = os.path.join(out_dir, "data", f"iter{k}", "trajectories",
                            f"{task}.jsonl")
        if os.path.exists(path):
            trajectories.extend(load_trajectories(path))
    if not trajectories:
        raise PrefloopError(f"no trajectories for iteration {k}; run collect first")
    pairs = []
    for task in cfg.train_tasks:
        n_task = [t for t in trajectories if t.task_id == task]
        if len(n_task) >= 2:
            total = len(n_task) * (len(n_task) - 1) // 2
            pairs.extend(pair_sampler(n_task, task,
                                      min(cfg.prefs_per_task, total),
                                      seed=pl.stage_seed(cfg.seed, "pair-sample",
                                                         task, k)))
    service = LabelService(
        trajectories, pairs,
        wal_path=os.path.join(out_dir, "data", f"iter{k}", "labels_wal.jsonl"),
        pipeline_iteration=k, seed=pl.stage_seed(cfg.seed, "serve", k))
    app = build_app(service, ui_dir=args.ui_dir)
    _summary(stage="serve-labeler", iteration=k, pairs=len(pairs),
             url=f"http://{args.host}:{args.port}")
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def cmd_train_rm(args) -> int:
    cfg = _load_cfg(args)
    out_dir = resolve_out_dir(args.out, cfg)
    k = args.iteration
    trajs, prefs = pl.load_cumulative_data(out_dir, k, cfg.train_tasks)
    if not prefs:
        raise PrefloopError("empty dataset: no preference records found")
    warm = None
    prev = os.path.join(out_dir, "rm", f"iter{k - 1}.json")
    if cfg.rm.warm_start and os.path.exists(prev):
        warm = RewardModel.load(prev)
    model, curve, n_pairs = pl.stage_train_rm(cfg, trajs, prefs, k,
                                              warm_start_model=warm)
    os.makedirs(os.path.join(out_dir, "rm"), exist_ok=True)
    rm_path = os.path.join(out_dir, "rm", f"iter{k}.json")
    model.save(rm_path)
    pl.write_csv(os.path.join(out_dir, "rm", f"iter{k}_curve.csv"),
                 ["epoch", "train_loss", "holdout_loss", "holdout_accuracy", "lr"],
                 [[row["epoch"], row["train_loss"], row["holdout_loss"],
                   row["holdout_accuracy"], row["lr"]] for row in curve])
    _summary(stage="train-rm", iteration=k, pairs=n_pairs,
             holdout_accuracy=model.metadata["holdout_accuracy"], path=rm_path)
    return 0


def cmd_finetune(args) -> int:
    cfg = _load_cfg(args)
    out_dir = resolve_out_dir(args.out, cfg)
    k = args.iteration
    rm_path = os.path.join(out_dir, "rm", f"iter{k}.json")
    if not os.path.exists(rm_path):
        raise PrefloopError(f"missing reward model {rm_path}; run train-rm first")
    model = RewardModel.load(rm_path)
    total = 0
    for task in cfg.train_tasks:
        label = "base" if k == 1 else f"iter{k - 1}"
        finals = _checkpoints_for(out_dir, label, task)
        tuned = pl.stage_finetune_set(cfg, task, finals, model, k)
        pl.save_checkpoints(out_dir, f"iter{k}", task, tuned)
        total += len(tuned)
    _summary(stage="finetune", iteration=k, checkpoints=total, out=out_dir)
    return 0


def _run_cfg(args):
    """For run-reading commands: the run's saved config wins over profiles."""
    cfg = _load_cfg(args)
    out_dir = resolve_out_dir(args.out, cfg)
    saved = os.path.join(out_dir, "config.toml")
    if not args.config and os.path.exists(saved):
        from .config import load_config
        cfg = load_config(saved)
    return cfg, out_dir


def cmd_evaluate(args) -> int:
    cfg, out_dir = _run_cfg(args)
    state = pl.regenerate_report(cfg, out_dir)
    final = max((m["iteration"] for m in state.metrics), default=0)
    rows = [m for m in state.metrics if m["iteration"] == final]
    _summary(stage="evaluate", iterations=final,
             mean_rm_preferred=float(np.mean([m["rm_preferred"] for m in rows]))
             if rows else 0.0)
    return 0


def cmd_pipeline(args) -> int:
    cfg = _load_cfg(args)
    out_dir = resolve_out_dir(args.out, cfg)
    iterations = args.iterations if args.iterations else cfg.iterations
    save_config(cfg, os.path.join(out_dir, "config.toml"))
    state = pl.iterate_pipeline(cfg, iterations, out_dir,
                                progress=lambda msg: print(msg, file=sys.stderr))
    final = state.metrics[-1] if state.metrics else {}
    _summary(stage="pipeline", iterations=iterations, out=out_dir,
             final_rm_preferred=final.get("rm_preferred", ""),
             final_original_preferred=final.get("original_preferred", ""))
    return 0


def cmd_report(args) -> int:
    cfg, out_dir = _run_cfg(args)
    state = pl.regenerate_report(cfg, out_dir)
    _print_tables(out_dir, state)
    _summary(stage="report", out=os.path.join(out_dir, "report"))
    return 0


def _print_tables(out_dir, state) -> None:
    import csv as _csv
    report_dir = os.path.join(out_dir, "report")
    for name in ("preference_table.csv", "success_table.csv", "diversity.csv",
                 "rm_accuracy.csv"):
        path = os.path.join(report_dir, name)
        if not os.path.exists(path):
            continue
        print(f"== {name} ==")
        with open(path, newline="", encoding="utf-8") as fh:
            for row in _csv.reader(fh):
                print("  " + "  ".join(f"{c:>12.12}" for c in row))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="prefloop",
        description="Preference-based policy fine-tuning pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, iteration=False):
        p.add_argument("--config", help="TOML config file")
        p.add_argument("--profile", default="desk", choices=sorted(PROFILES))
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None,
                       help=f"output dir (or ${pl_out_var()})")
        p.add_argument("--tasks", default=None, help="comma-separated train tasks")
        if iteration:
            p.add_argument("--iteration", type=int, default=1)

    p = sub.add_parser("train-diverse", help="train the base diverse policy sets")
    common(p)
    p.set_defaults(fn=cmd_train_diverse)
    p = sub.add_parser("collect", help="record trajectories from checkpoints")
    common(p, iteration=True)
    p.set_defaults(fn=cmd_collect)
    p = sub.add_parser("label-oracle", help="label sampled pairs with the oracle")
    common(p, iteration=True)
    p.set_defaults(fn=cmd_label_oracle)
    p = sub.add_parser("serve-labeler", help="serve pairs to the browser console")
    common(p, iteration=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8710)
    p.add_argument("--ui-dir", default=None, help="built UI bundle to serve")
    p.set_defaults(fn=cmd_serve_labeler)
    p = sub.add_parser("train-rm", help="train the reward model on cumulative data")
    common(p, iteration=True)
    p.set_defaults(fn=cmd_train_rm)
    p = sub.add_parser("finetune", help="fine-tune policy sets with the reward model")
    common(p, iteration=True)
    p.set_defaults(fn=cmd_finetune)
    p = sub.add_parser("evaluate", help="recompute evaluation tables from artifacts")
    common(p)
    p.set_defaults(fn=cmd_evaluate)
    p = sub.add_parser("pipeline", help="run the full iterative loop")
    common(p)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--labeler", choices=("oracle", "human"), default=None)
    p.set_defaults(fn=cmd_pipeline)
    p = sub.add_parser("report", help="emit summary tables for a finished run")
    common(p)
    p.set_defaults(fn=cmd_report)
    return parser


def pl_out_var() -> str:
    from .config import OUT_DIR_ENV_VAR
    return OUT_DIR_ENV_VAR


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else USAGE_EXIT
    try:
        return args.fn(args)
    except PrefloopError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return STAGE_EXIT


if __name__ == "__main__":
    sys.exit(main())
