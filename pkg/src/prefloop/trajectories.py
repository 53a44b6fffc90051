"""Trajectory recording, sliding-window extraction, pair sampling, and
line-delimited storage.

Stored frames are normalized: joint angles divided by the joint limit and
actions by the action bound, both landing in [-1, 1]. The normalization is a
fixed affine map, so physical values round-trip exactly.
"""

import json
import os
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from filelock import FileLock

from .envs import (ACTION_BOUND, JOINT_LIMIT, EnvSpec, PlanarArmEnv,
                   success_eval)
from .errors import ConfigurationError, DataError, StorageError

SCHEMA_VERSION = 1

TRAJECTORY_FIELDS = {"schema_version", "kind", "trajectory_id", "task_id",
                     "checkpoint_id", "seed", "success", "length",
                     "q_norm", "actions", "task_rewards", "object_states"}
PREFERENCE_FIELDS = {"schema_version", "kind", "pair_id", "task_id", "left_id",
                     "right_id", "verdict", "labeler_id", "timestamp",
                     "pipeline_iteration"}


class Verdict(str, Enum):
    LEFT = "LEFT"
    RIGHT = "RIGHT"
    NOT_SURE = "NOT_SURE"


@dataclass
class Trajectory:
    trajectory_id: str
    task_id: str
    checkpoint_id: str
    seed: int
    q_norm: np.ndarray        # (H, 3) joint angles / JOINT_LIMIT, pre-action
    actions: np.ndarray       # (H, 3) applied action / ACTION_BOUND
    task_rewards: np.ndarray  # (H,)
    object_states: np.ndarray  # (H, d) task-specific, physical units
    success: bool

    @property
    def length(self) -> int:
        return self.q_norm.shape[0]

    def q_radians(self) -> np.ndarray:
        return self.q_norm * JOINT_LIMIT

    def actions_radians(self) -> np.ndarray:
        return self.actions * ACTION_BOUND


@dataclass
class WindowSample:
    vector: np.ndarray        # ((3+3)*M,) stacked (q_norm, action) frames
    trajectory_id: str
    start: int


@dataclass
class PreferenceRecord:
    pair_id: str
    task_id: str
    left_id: str
    right_id: str
    verdict: Verdict
    labeler_id: str
    timestamp: str
    pipeline_iteration: int

    def __post_init__(self):
        if self.left_id == self.right_id:
            raise DataError(f"preference pair {self.pair_id}: left == right")
        self.verdict = Verdict(self.verdict)


def normalize_q(q_rad: np.ndarray) -> np.ndarray:
    return np.asarray(q_rad, dtype=np.float64) / JOINT_LIMIT


def denormalize_q(q_norm: np.ndarray) -> np.ndarray:
    return np.asarray(q_norm, dtype=np.float64) * JOINT_LIMIT


def record_trajectory(env_spec: EnvSpec, checkpoint, seed: int,
                      deterministic: bool = False, trajectory_id=None) -> Trajectory:
    """Roll the checkpointed policy for one episode and store every frame."""
    if checkpoint.task_id != env_spec.task_id:
        raise ConfigurationError(
            f"checkpoint task {checkpoint.task_id} != env task {env_spec.task_id}")
    policy = checkpoint.build_policy()
    env = PlanarArmEnv(env_spec)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    obs = env.reset(int(rng.integers(0, 2 ** 31 - 1)))
    qs, acts, rewards, objects = [], [], [], []
    done = False
    while not done:
        u, _ = policy.act(obs[None, :], rng, deterministic=deterministic)
        a_norm = np.clip(u[0], -1.0, 1.0)
        tr = env.step(ACTION_BOUND * a_norm)
        qs.append(tr.q_before / JOINT_LIMIT)
        acts.append(a_norm)
        rewards.append(tr.task_reward)
        objects.append(tr.object_state_before)
        obs = tr.obs
        done = tr.done
    if trajectory_id is None:
        trajectory_id = f"{env_spec.task_id}-{checkpoint.checkpoint_id}-r{seed}"
    return Trajectory(
        trajectory_id=trajectory_id, task_id=env_spec.task_id,
        checkpoint_id=checkpoint.checkpoint_id, seed=seed,
        q_norm=np.asarray(qs), actions=np.asarray(acts),
        task_rewards=np.asarray(rewards), object_states=np.asarray(objects),
        success=tr.success)


def trajectory_success(spec: EnvSpec, traj: Trajectory) -> bool:
    """Recompute the task success predicate from the stored frames."""
    return success_eval(spec, traj.q_radians(), traj.object_states)


def extract_windows(traj: Trajectory, m: int):
    """All H-M+1 sliding windows of M consecutive stacked (q, action) frames."""
    mat = window_matrix(traj, m)
    return [WindowSample(vector=mat[t], trajectory_id=traj.trajectory_id, start=t)
            for t in range(mat.shape[0])]


def window_matrix(traj: Trajectory, m: int) -> np.ndarray:
    """(H-M+1, (3+3)*M) matrix of all window vectors, in start order."""
    h = traj.length
    if h < m:
        raise DataError(f"trajectory {traj.trajectory_id}: length {h} < window {m}")
    frames = np.concatenate([traj.q_norm, traj.actions], axis=1)  # (H, 6)
    width = frames.shape[1]
    n_win = h - m + 1
    out = np.empty((n_win, width * m))
    for t in range(n_win):
        out[t] = frames[t:t + m].reshape(-1)
    return out


def pair_sampler(trajectories, task_id: str, n_pairs: int, seed: int):
    """Distinct unordered pairs (no within-batch repeats), preferring pairs
    whose members come from different checkpoints."""
    pool = [t for t in trajectories if t.task_id == task_id]
    if len(pool) < 2:
        raise DataError(f"need >=2 trajectories for task {task_id}, have {len(pool)}")
    cross, same = [], []
    for i in range(len(pool)):
        for j in range(i + 1, len(pool)):
            pair = (pool[i].trajectory_id, pool[j].trajectory_id)
            if pool[i].checkpoint_id != pool[j].checkpoint_id:
                cross.append(pair)
            else:
                same.append(pair)
    total = len(cross) + len(same)
    if n_pairs > total:
        raise DataError(
            f"requested {n_pairs} pairs but only {total} distinct pairs exist"
            f" for task {task_id}")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    rng.shuffle(cross)
    rng.shuffle(same)
    return (cross + same)[:n_pairs]


# --- line-delimited storage ---------------------------------------------------

def _header_record(kind: str) -> dict:
    return {"schema_version": SCHEMA_VERSION, "kind": f"{kind}-file-header"}


def trajectory_to_record(traj: Trajectory) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "trajectory",
        "trajectory_id": traj.trajectory_id,
        "task_id": traj.task_id,
        "checkpoint_id": traj.checkpoint_id,
        "seed": traj.seed,
        "success": bool(traj.success),
        "length": traj.length,
        "q_norm": traj.q_norm.tolist(),
        "actions": traj.actions.tolist(),
        "task_rewards": traj.task_rewards.tolist(),
        "object_states": traj.object_states.tolist(),
    }


def trajectory_from_record(rec: dict, where: str = "") -> Trajectory:
    _check_record(rec, "trajectory", TRAJECTORY_FIELDS, where)
    traj = Trajectory(
        trajectory_id=rec["trajectory_id"], task_id=rec["task_id"],
        checkpoint_id=rec["checkpoint_id"], seed=rec["seed"],
        q_norm=np.asarray(rec["q_norm"], dtype=np.float64),
        actions=np.asarray(rec["actions"], dtype=np.float64),
        task_rewards=np.asarray(rec["task_rewards"], dtype=np.float64),
        object_states=np.asarray(rec["object_states"], dtype=np.float64),
        success=rec["success"])
    if traj.length != rec["length"]:
        raise StorageError(f"{where}: stored length {rec['length']} != frame count")
    return traj


def preference_to_record(pref: PreferenceRecord) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "preference",
        "pair_id": pref.pair_id,
        "task_id": pref.task_id,
        "left_id": pref.left_id,
        "right_id": pref.right_id,
        "verdict": pref.verdict.value,
        "labeler_id": pref.labeler_id,
        "timestamp": pref.timestamp,
        "pipeline_iteration": pref.pipeline_iteration,
    }


def preference_from_record(rec: dict, where: str = "") -> PreferenceRecord:
    _check_record(rec, "preference", PREFERENCE_FIELDS, where)
    return PreferenceRecord(
        pair_id=rec["pair_id"], task_id=rec["task_id"], left_id=rec["left_id"],
        right_id=rec["right_id"], verdict=Verdict(rec["verdict"]),
        labeler_id=rec["labeler_id"], timestamp=rec["timestamp"],
        pipeline_iteration=rec["pipeline_iteration"])


def _check_record(rec: dict, kind: str, allowed: set, where: str):
    if rec.get("schema_version") != SCHEMA_VERSION:
        raise StorageError(
            f"{where}: schema_version {rec.get('schema_version')!r} unsupported"
            f" (expected {SCHEMA_VERSION})")
    if rec.get("kind") != kind:
        raise StorageError(f"{where}: record kind {rec.get('kind')!r}, expected {kind!r}")
    unknown = set(rec) - allowed
    if unknown:
        raise StorageError(
            f"{where}: unknown fields {sorted(unknown)} (future schema version?)")


def _lock_for(path) -> FileLock:
    return FileLock(str(path) + ".lock")


def write_jsonl(path, records, kind: str, append: bool = False) -> None:
    """Write records under an exclusive lock; a fresh file gets a header line."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with _lock_for(path):
        new_file = not (append and os.path.exists(path) and os.path.getsize(path) > 0)
        mode = "a" if append else "w"
        with open(path, mode, encoding="utf-8") as fh:
            if new_file:
                fh.write(json.dumps(_header_record(kind)) + "\n")
            for rec in records:
                fh.write(json.dumps(rec) + "\n")


def read_jsonl(path, kind: str):
    """Parse every record line (header excluded); empty/missing file -> []."""
    if not os.path.exists(path) or os.path.getsize(path) == 0:
        return []
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            where = f"{path}:{lineno}"
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise StorageError(f"{where}: corrupt record: {exc}") from exc
            if rec.get("kind") == f"{kind}-file-header":
                if rec.get("schema_version") != SCHEMA_VERSION:
                    raise StorageError(f"{where}: unsupported file schema_version")
                continue
            out.append((where, rec))
    return out


def save_trajectories(path, trajectories, append: bool = False) -> None:
    write_jsonl(path, [trajectory_to_record(t) for t in trajectories],
                "trajectory", append=append)


def load_trajectories(path):
    return [trajectory_from_record(rec, where) for where, rec in
            read_jsonl(path, "trajectory")]


def save_preferences(path, prefs, append: bool = False) -> None:
    write_jsonl(path, [preference_to_record(p) for p in prefs],
                "preference", append=append)


def load_preferences(path):
    return [preference_from_record(rec, where) for where, rec in
            read_jsonl(path, "preference")]
