"""Multi-iteration pipeline: diverse policy training, trajectory collection,
preference labeling, reward-model training, and policy fine-tuning, with
per-iteration evaluation against the frozen original policy sets.

Every stage draws its randomness from a seed derived from (config seed,
stage name, task, item), so a fixed config reproduces bit-identical reports.
"""

import csv
import json
import os
import zlib
from dataclasses import dataclass, field

import numpy as np

from .config import PipelineConfig
from .envs import make_env_spec
from .errors import DataError, PipelineError, StorageError
from .finetune import finetune_policy
from .oracle import diversity_metric, make_oracle_labeler, preference_tally
from .policy import PolicyCheckpoint, evaluate_success, train_diverse_set
from .reward_model import RewardModel, build_pair_dataset, train_rm
from .trajectories import (PreferenceRecord, load_preferences,
                           load_trajectories, pair_sampler, record_trajectory,
                           save_preferences, save_trajectories)


def stage_seed(root_seed: int, *parts) -> int:
    """Stable derived seed for a named pipeline stage."""
    words = [root_seed & 0xFFFFFFFF]
    for part in parts:
        if isinstance(part, str):
            words.append(zlib.crc32(part.encode()))
        else:
            words.append(int(part) & 0xFFFFFFFF)
    ss = np.random.SeedSequence(words)
    return int(np.random.default_rng(ss).integers(0, 2 ** 31 - 1))


def env_spec_for(cfg: PipelineConfig, task: str):
    return make_env_spec(task, alpha_balance=cfg.alpha_balance)


@dataclass
class PipelineState:
    iteration: int = 0
    base_checkpoints: dict = field(default_factory=dict)   # task -> [paths]
    current_checkpoints: dict = field(default_factory=dict)
    rm_path: str = ""
    dataset_records: int = 0
    metrics: list = field(default_factory=list)
    unseen_metrics: list = field(default_factory=list)
    success_original: dict = field(default_factory=dict)
    eval_seeds: dict = field(default_factory=dict)

    def to_file(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.__dict__, fh, indent=1)

    @staticmethod
    def from_file(path) -> "PipelineState":
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        state = PipelineState()
        state.__dict__.update(doc)
        return state


def _checkpoint_dir(out_dir, label, task):
    path = os.path.join(out_dir, "checkpoints", label, task)
    os.makedirs(path, exist_ok=True)
    return path


def save_checkpoints(out_dir, label, task, checkpoints):
    paths = []
    for ckpt in checkpoints:
        path = os.path.join(_checkpoint_dir(out_dir, label, task),
                            ckpt.checkpoint_id + ".json")
        ckpt.to_file(path)
        paths.append(os.path.relpath(path, out_dir))
    return paths


def load_checkpoints(out_dir, rel_paths):
    return [PolicyCheckpoint.from_file(os.path.join(out_dir, p)) for p in rel_paths]


# --- stages -------------------------------------------------------------------


def stage_train_base(cfg: PipelineConfig, task: str, shaper_factory=None):
    """Iteration-1 policy production: a fresh diverse set on the task reward."""
    spec = env_spec_for(cfg, task)
    kept, finals = train_diverse_set(
        spec, cfg.n_policies, cfg.ppo,
        seed=stage_seed(cfg.seed, "train-base", task),
        updates=cfg.base_updates, shaper_factory=shaper_factory,
        checkpoint_interval=cfg.checkpoint_interval,
        success_filter=cfg.success_filter, eval_episodes=cfg.eval_episodes,
        pipeline_iteration=0)
    return kept, finals


def stage_record(cfg: PipelineConfig, task: str, checkpoints, iteration: int,
                 out_path=None, per_checkpoint=None, deterministic=False,
                 tag="collect"):
    spec = env_spec_for(cfg, task)
    count = per_checkpoint if per_checkpoint is not None else cfg.trajectories_per_checkpoint
    trajectories = []
    for ckpt in checkpoints:
        for r in range(count):
            seed = stage_seed(cfg.seed, tag, task, iteration, ckpt.checkpoint_id, r)
            trajectories.append(record_trajectory(spec, ckpt, seed))
    if out_path is not None:
        save_trajectories(out_path, trajectories)
    return trajectories


def stage_label_oracle(cfg: PipelineConfig, task: str, trajectories,
                       iteration: int, n_pairs=None):
    """Synthetic preference labels over sampled trajectory pairs."""
    n_pairs = n_pairs if n_pairs is not None else cfg.prefs_per_task
    total_possible = len(trajectories) * (len(trajectories) - 1) // 2
    n_pairs = min(n_pairs, total_possible)
    pairs = pair_sampler(trajectories, task, n_pairs,
                         seed=stage_seed(cfg.seed, "pair-sample", task, iteration))
    by_id = {t.trajectory_id: t for t in trajectories}
    labeler = make_oracle_labeler(cfg.oracle)
    records = []
    for idx, (left_id, right_id) in enumerate(pairs):
        verdict = labeler(by_id[left_id], by_id[right_id])
        records.append(PreferenceRecord(
            pair_id=f"iter{iteration}-{task}-{idx:05d}", task_id=task,
            left_id=left_id, right_id=right_id, verdict=verdict,
            labeler_id="oracle", timestamp="",
            pipeline_iteration=iteration))
    return records


def load_cumulative_data(out_dir, up_to_iteration: int, tasks):
    """All trajectories and preferences from data/iter1..k (append-only union)."""
    trajectories = []
    preferences = []
    for k in range(1, up_to_iteration + 1):
        for task in tasks:
            path = os.path.join(out_dir, "data", f"iter{k}", "trajectories",
                                f"{task}.jsonl")
            if os.path.exists(path):
                trajectories.extend(load_trajectories(path))
        pref_path = os.path.join(out_dir, "data", f"iter{k}", "preferences.jsonl")
        if os.path.exists(pref_path):
            preferences.extend(load_preferences(pref_path))
    return trajectories, preferences


def stage_train_rm(cfg: PipelineConfig, trajectories, preferences,
                   iteration: int, warm_start_model=None):
    dataset = build_pair_dataset(
        preferences, trajectories, cfg.window_size,
        seed=stage_seed(cfg.seed, "rm-dataset", iteration),
        pairs_per_record=cfg.rm.pairs_per_record)
    if not dataset:
        raise DataError("no decisive preference records; cannot train the reward model")
    model, curve = train_rm(cfg.rm, dataset, warm_start_model=warm_start_model,
                            seed=stage_seed(cfg.seed, "rm-train", iteration))
    model.metadata["iteration"] = iteration
    return model, curve, len(dataset)


def stage_finetune_set(cfg: PipelineConfig, task: str, prev_finals, model,
                       iteration: int):
    """Fine-tune every set member against the combined reward, with diversity
    pressure against the members already fine-tuned this iteration."""
    spec = env_spec_for(cfg, task)
    tuned = []
    members = []
    for i, ckpt in enumerate(prev_finals):
        new_ckpt = finetune_policy(
            ckpt, spec, model, cfg.combine, cfg.ppo,
            updates=cfg.finetune_updates,
            seed=stage_seed(cfg.seed, "finetune", task, iteration, i),
            pipeline_iteration=iteration, diversity_members=members)
        tuned.append(new_ckpt)
        members.append(new_ckpt.build_policy())
    return tuned


def mean_set_success(cfg: PipelineConfig, task: str, checkpoints) -> float:
    spec = env_spec_for(cfg, task)
    rates = [evaluate_success(c.build_policy(), spec, cfg.eval_episodes,
                              stage_seed(cfg.seed, "success-eval", task,
                                         c.checkpoint_id))
             for c in checkpoints]
    return float(np.mean(rates))


# --- the full loop --------------------------------------------------------------


def iterate_pipeline(cfg: PipelineConfig, n_iterations: int, out_dir: str,
                     progress=None) -> PipelineState:
    def log(msg):
        if progress:
            progress(msg)

    state = PipelineState()
    os.makedirs(out_dir, exist_ok=True)
    if cfg.labeler != "oracle":
        raise PipelineError(
            "iterate_pipeline drives the synthetic oracle; run the labeling"
            " service stages individually for human mode")

    stage = "train-base"
    try:
        base_finals = {}
        base_kept = {}
        for task in cfg.train_tasks:
            log(f"[base] training diverse set on {task}")
            kept, finals = stage_train_base(cfg, task)
            base_kept[task] = kept
            base_finals[task] = finals
            state.base_checkpoints[task] = save_checkpoints(out_dir, "base", task, finals)
        # Frozen originals: evaluation trajectories and success rates.
        stage = "base-eval"
        base_eval_trajs = {}
        for task in cfg.train_tasks:
            path = os.path.join(out_dir, "data", "base_eval", f"{task}.jsonl")
            base_eval_trajs[task] = stage_record(
                cfg, task, base_finals[task], 0, out_path=path, tag="eval")
            state.success_original[task] = mean_set_success(cfg, task, base_finals[task])

        current = base_finals
        model = None
        for k in range(1, n_iterations + 1):
            state.iteration = k
            stage = f"iter{k}-record"
            iter_trajs = {}
            for task in cfg.train_tasks:
                log(f"[iter {k}] recording trajectories on {task}")
                source = base_kept[task] if k == 1 else current[task]
                path = os.path.join(out_dir, "data", f"iter{k}", "trajectories",
                                    f"{task}.jsonl")
                iter_trajs[task] = stage_record(cfg, task, source, k, out_path=path)
            stage = f"iter{k}-label"
            records = []
            for task in cfg.train_tasks:
                records.extend(stage_label_oracle(cfg, task, iter_trajs[task], k))
            save_preferences(os.path.join(out_dir, "data", f"iter{k}",
                                          "preferences.jsonl"), records)
            stage = f"iter{k}-train-rm"
            log(f"[iter {k}] training reward model")
            all_trajs, all_prefs = load_cumulative_data(out_dir, k, cfg.train_tasks)
            if len(all_prefs) < state.dataset_records:
                raise PipelineError("preference dataset shrank between iterations")
            state.dataset_records = len(all_prefs)
            model, curve, n_pairs = stage_train_rm(cfg, all_trajs, all_prefs, k,
                                                   warm_start_model=model)
            rm_dir = os.path.join(out_dir, "rm")
            os.makedirs(rm_dir, exist_ok=True)
            rm_path = os.path.join(rm_dir, f"iter{k}.json")
            model.save(rm_path)
            state.rm_path = os.path.relpath(rm_path, out_dir)
            write_csv(os.path.join(rm_dir, f"iter{k}_curve.csv"),
                      ["epoch", "train_loss", "holdout_loss", "holdout_accuracy", "lr"],
                      [[row["epoch"], row["train_loss"], row["holdout_loss"],
                        row["holdout_accuracy"], row["lr"]] for row in curve])
            stage = f"iter{k}-finetune"
            tuned = {}
            for task in cfg.train_tasks:
                log(f"[iter {k}] fine-tuning {task} with the reward model")
                tuned[task] = stage_finetune_set(cfg, task, current[task], model, k)
                state.current_checkpoints[task] = save_checkpoints(
                    out_dir, f"iter{k}", task, tuned[task])
            current = tuned
            stage = f"iter{k}-evaluate"
            for task in cfg.train_tasks:
                eval_path = os.path.join(out_dir, "data", f"iter{k}", "eval",
                                         f"{task}_rm.jsonl")
                rm_trajs = stage_record(cfg, task, tuned[task], k,
                                        out_path=eval_path, tag="eval")
                eval_seed = stage_seed(cfg.seed, "tally", task, k)
                tally = preference_tally(rm_trajs, base_eval_trajs[task],
                                         make_oracle_labeler(cfg.oracle),
                                         cfg.eval_pairs, eval_seed)
                succ_rm = mean_set_success(cfg, task, tuned[task])
                groups = _group_by_checkpoint(rm_trajs)
                div = diversity_metric(groups) if len(groups) >= 2 else 0.0
                state.eval_seeds[f"iter{k}:{task}"] = eval_seed
                state.metrics.append({
                    "iteration": k, "task": task,
                    "success_rate_original": state.success_original[task],
                    "success_rate_rm": succ_rm,
                    "rm_preferred": tally.rm_preferred,
                    "original_preferred": tally.original_preferred,
                    "not_sure": tally.not_sure,
                    "oracle_preference_score": tally.c_hf,
                    "rm_holdout_accuracy": model.metadata["holdout_accuracy"],
                    "diversity": div,
                })
                log(f"[iter {k}] {task}: rm {tally.rm_preferred:.2f} vs orig"
                    f" {tally.original_preferred:.2f} (not sure {tally.not_sure:.2f});"
                    f" success {state.success_original[task]:.2f} -> {succ_rm:.2f}")
        stage = "unseen"
        if model is not None:
            for task in cfg.unseen_tasks:
                log(f"[unseen] {task}: train originals and fine-tune with final RM")
                state.unseen_metrics.extend(
                    run_unseen_protocol(cfg, task, model, out_dir))
    except (DataError, StorageError, PipelineError) as exc:
        raise PipelineError(f"stage {stage} (iteration {state.iteration}): {exc}") from exc

    state.to_file(os.path.join(out_dir, "state.json"))
    write_report(cfg, out_dir, state)
    return state


def _group_by_checkpoint(trajectories):
    groups = {}
    for t in trajectories:
        groups.setdefault(t.checkpoint_id, []).append(t)
    return list(groups.values())


def run_unseen_protocol(cfg: PipelineConfig, task: str, model: RewardModel,
                        out_dir: str):
    """Unseen-task generalization: fresh per-seed originals, fine-tuned with the
    final RM; the task never contributes RM training data."""
    spec = env_spec_for(cfg, task)
    rows = []
    orig_trajs_all = []
    tuned_trajs_all = []
    orig_rates = []
    tuned_rates = []
    for s in range(cfg.unseen_seeds):
        seed = stage_seed(cfg.seed, "unseen-train", task, s)
        kept, finals = train_diverse_set(
            spec, 1, cfg.ppo, seed=seed, updates=cfg.base_updates,
            success_filter=0.0, eval_episodes=cfg.eval_episodes,
            pipeline_iteration=0)
        orig = finals[0]
        tuned = finetune_policy(
            orig, spec, model, cfg.combine, cfg.ppo,
            updates=cfg.finetune_updates,
            seed=stage_seed(cfg.seed, "unseen-finetune", task, s),
            pipeline_iteration=-1)
        orig_trajs = stage_record(cfg, task, [orig], 0, tag="unseen-eval")
        tuned_trajs = stage_record(cfg, task, [tuned], 0, tag="unseen-eval")
        orig_trajs_all.extend(orig_trajs)
        tuned_trajs_all.extend(tuned_trajs)
        orig_rates.append(mean_set_success(cfg, task, [orig]))
        tuned_rates.append(mean_set_success(cfg, task, [tuned]))
    save_trajectories(os.path.join(out_dir, "data", "unseen",
                                   f"{task}_original.jsonl"), orig_trajs_all)
    save_trajectories(os.path.join(out_dir, "data", "unseen",
                                   f"{task}_rm.jsonl"), tuned_trajs_all)
    tally = preference_tally(tuned_trajs_all, orig_trajs_all,
                             make_oracle_labeler(cfg.oracle), cfg.eval_pairs,
                             stage_seed(cfg.seed, "unseen-tally", task))
    rows.append({
        "task": task,
        "success_rate_original": float(np.mean(orig_rates)),
        "success_rate_rm": float(np.mean(tuned_rates)),
        "rm_preferred": tally.rm_preferred,
        "original_preferred": tally.original_preferred,
        "not_sure": tally.not_sure,
        "oracle_preference_score": tally.c_hf,
    })
    return rows


# --- reporting -------------------------------------------------------------------


def fmt(x):
    if isinstance(x, float):
        return repr(x)
    return x


def write_csv(path, header, rows):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(x) for x in row])


def write_report(cfg: PipelineConfig, out_dir: str, state: PipelineState):
    report_dir = os.path.join(out_dir, "report")
    os.makedirs(report_dir, exist_ok=True)
    write_csv(os.path.join(report_dir, "iterations.csv"),
              ["iteration", "task", "success_rate_original", "success_rate_rm",
               "oracle_preference_score", "rm_holdout_accuracy"],
              [[m["iteration"], m["task"], m["success_rate_original"],
                m["success_rate_rm"], m["oracle_preference_score"],
                m["rm_holdout_accuracy"]] for m in state.metrics])
    pref_rows = [[m["iteration"], m["task"], m["rm_preferred"],
                  m["original_preferred"], m["not_sure"]] for m in state.metrics]
    for k in sorted({m["iteration"] for m in state.metrics}):
        rows_k = [m for m in state.metrics if m["iteration"] == k]
        pref_rows.append([k, "TOTAL",
                          float(np.mean([m["rm_preferred"] for m in rows_k])),
                          float(np.mean([m["original_preferred"] for m in rows_k])),
                          float(np.mean([m["not_sure"] for m in rows_k]))])
    write_csv(os.path.join(report_dir, "preference_table.csv"),
              ["iteration", "task", "rm_preferred", "original_preferred", "not_sure"],
              pref_rows)
    final_k = max((m["iteration"] for m in state.metrics), default=0)
    succ_rows = [["seen", m["task"], m["success_rate_original"], m["success_rate_rm"]]
                 for m in state.metrics if m["iteration"] == final_k]
    for row in state.unseen_metrics:
        succ_rows.append(["unseen", row["task"], row["success_rate_original"],
                          row["success_rate_rm"]])
    write_csv(os.path.join(report_dir, "success_table.csv"),
              ["scope", "task", "success_rate_original", "success_rate_rm"], succ_rows)
    write_csv(os.path.join(report_dir, "diversity.csv"),
              ["iteration", "task", "diversity"],
              [[m["iteration"], m["task"], m["diversity"]] for m in state.metrics])
    write_csv(os.path.join(report_dir, "rm_accuracy.csv"),
              ["iteration", "task", "rm_holdout_accuracy"],
              [[m["iteration"], m["task"], m["rm_holdout_accuracy"]]
               for m in state.metrics])
    if state.unseen_metrics:
        write_csv(os.path.join(report_dir, "unseen.csv"),
                  ["task", "success_rate_original", "success_rate_rm",
                   "rm_preferred", "original_preferred", "not_sure",
                   "oracle_preference_score"],
                  [[r["task"], r["success_rate_original"], r["success_rate_rm"],
                    r["rm_preferred"], r["original_preferred"], r["not_sure"],
                    r["oracle_preference_score"]] for r in state.unseen_metrics])


def regenerate_report(cfg: PipelineConfig, out_dir: str) -> PipelineState:
    """Re-emit the report tables after integrity-checking the raw artifacts.

    Missing artifacts are listed; a corrupt trajectory file fails with the
    file and line. Preference tallies are recomputed from the stored eval
    trajectories rather than trusted from state.json.
    """
    state_path = os.path.join(out_dir, "state.json")
    missing = []
    if not os.path.exists(state_path):
        raise PipelineError(f"missing artifacts: ['{state_path}']")
    state = PipelineState.from_file(state_path)
    labeler = make_oracle_labeler(cfg.oracle)
    for m in state.metrics:
        k, task = m["iteration"], m["task"]
        base_path = os.path.join(out_dir, "data", "base_eval", f"{task}.jsonl")
        eval_path = os.path.join(out_dir, "data", f"iter{k}", "eval",
                                 f"{task}_rm.jsonl")
        for path in (base_path, eval_path):
            if not os.path.exists(path):
                missing.append(path)
        if missing:
            continue
        base_trajs = load_trajectories(base_path)
        rm_trajs = load_trajectories(eval_path)
        tally = preference_tally(rm_trajs, base_trajs, labeler, cfg.eval_pairs,
                                 state.eval_seeds[f"iter{k}:{task}"])
        m["rm_preferred"] = tally.rm_preferred
        m["original_preferred"] = tally.original_preferred
        m["not_sure"] = tally.not_sure
        m["oracle_preference_score"] = tally.c_hf
        groups = _group_by_checkpoint(rm_trajs)
        m["diversity"] = diversity_metric(groups) if len(groups) >= 2 else 0.0
    if missing:
        raise PipelineError(f"missing artifacts: {sorted(set(missing))}")
    write_report(cfg, out_dir, state)
    return state
