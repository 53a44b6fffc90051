"""Synthetic human-likeness oracle and evaluation metrics.

The oracle scores a trajectory by penalizing joint velocity, jerk (second
differences), and proximity to the joint limits; smoother, calmer motion
scores higher (max 0 for a constant in-limit trajectory). A relative margin
turns near-ties into NOT_SURE verdicts.
"""

from dataclasses import dataclass

import numpy as np
from scipy import stats as scipy_stats

from .envs import JOINT_LIMIT
from .errors import DataError
from .trajectories import Trajectory, Verdict


@dataclass
class OracleConfig:
    w_velocity: float = 1.0
    w_jerk: float = 2.0
    w_limit: float = 5.0
    # Relative score gap below which the verdict is NOT_SURE; 0.4 puts the
    # oracle's abstention rate on first-iteration policy data at ~41%.
    not_sure_margin: float = 0.40

    def __post_init__(self):
        if self.w_velocity <= 0 and self.w_jerk <= 0 and self.w_limit <= 0:
            raise DataError("at least one oracle weight must be positive")
        if self.not_sure_margin < 0:
            raise DataError("not_sure_margin must be >= 0")


@dataclass
class EvalReport:
    rm_preferred: float
    original_preferred: float
    not_sure: float
    c_hf: float
    n_pairs: int

    def __post_init__(self):
        total = self.rm_preferred + self.original_preferred + self.not_sure
        if abs(total - 1.0) > 1e-9:
            raise DataError(f"preference fractions sum to {total}, not 1")


def oracle_score(traj: Trajectory, config: OracleConfig) -> float:
    """Higher is more human-like; 0 only for a constant, well-in-limit trajectory."""
    q = traj.q_radians()
    h = q.shape[0]
    if h < 3:
        raise DataError(f"trajectory {traj.trajectory_id}: need >=3 frames, have {h}")
    dq = np.diff(q, axis=0)
    ddq = np.diff(q, n=2, axis=0)
    proximity = np.maximum(0.0, np.abs(q) / JOINT_LIMIT - 0.9) ** 2
    total = (config.w_velocity * float(np.sum(dq * dq))
             + config.w_jerk * float(np.sum(ddq * ddq))
             + config.w_limit * float(np.sum(proximity)))
    return -total / h


def oracle_preference(left: Trajectory, right: Trajectory,
                      config: OracleConfig) -> Verdict:
    if left.task_id != right.task_id:
        raise DataError(
            f"cannot compare tasks {left.task_id} and {right.task_id}")
    s_l = oracle_score(left, config)
    s_r = oracle_score(right, config)
    scale = max(abs(s_l), abs(s_r), 1e-9)
    if abs(s_l - s_r) <= config.not_sure_margin * scale:
        return Verdict.NOT_SURE
    return Verdict.LEFT if s_l > s_r else Verdict.RIGHT


def make_oracle_labeler(config: OracleConfig):
    """(left, right) -> Verdict closure over the oracle config."""
    def labeler(left: Trajectory, right: Trajectory) -> Verdict:
        return oracle_preference(left, right, config)
    return labeler


def human_preference_score(set_i, set_j, labeler, n_pairs: int, seed: int) -> float:
    """Signed win fraction of set_i over set_j on n_pairs random pairs.

    NOT_SURE pairs contribute zero to the sum but still count in the
    denominator, so the score lives in [-1, 1].
    """
    if not set_i or not set_j:
        raise DataError("both trajectory sets must be non-empty")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    total = 0
    for _ in range(n_pairs):
        ti = set_i[int(rng.integers(0, len(set_i)))]
        tj = set_j[int(rng.integers(0, len(set_j)))]
        verdict = labeler(ti, tj)
        if verdict == Verdict.LEFT:
            total += 1
        elif verdict == Verdict.RIGHT:
            total -= 1
    return total / n_pairs


def preference_tally(set_rm, set_orig, labeler, n_pairs: int, seed: int) -> EvalReport:
    """Preference fractions (rm / original / not-sure) plus c_HF on one pair batch."""
    if not set_rm or not set_orig:
        raise DataError("both trajectory sets must be non-empty")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    wins_rm = 0
    wins_orig = 0
    for _ in range(n_pairs):
        t_rm = set_rm[int(rng.integers(0, len(set_rm)))]
        t_orig = set_orig[int(rng.integers(0, len(set_orig)))]
        verdict = labeler(t_rm, t_orig)
        if verdict == Verdict.LEFT:
            wins_rm += 1
        elif verdict == Verdict.RIGHT:
            wins_orig += 1
    not_sure = n_pairs - wins_rm - wins_orig
    return EvalReport(rm_preferred=wins_rm / n_pairs,
                      original_preferred=wins_orig / n_pairs,
                      not_sure=not_sure / n_pairs,
                      c_hf=(wins_rm - wins_orig) / n_pairs,
                      n_pairs=n_pairs)


def diversity_metric(groups) -> float:
    """Mean Euclidean distance between flattened joint-angle sequences over all
    cross-policy trajectory pairs. `groups` holds one trajectory list per policy."""
    groups = [list(g) for g in groups]
    if len(groups) < 2:
        raise DataError("diversity needs trajectories from >=2 policies")
    flats = []
    for gi, group in enumerate(groups):
        for traj in group:
            flats.append((gi, traj.q_radians().reshape(-1)))
    length = flats[0][1].shape[0]
    for _, v in flats:
        if v.shape[0] != length:
            raise DataError("diversity requires equal-length trajectories")
    total = 0.0
    count = 0
    for i in range(len(flats)):
        for j in range(i + 1, len(flats)):
            if flats[i][0] == flats[j][0]:
                continue
            total += float(np.linalg.norm(flats[i][1] - flats[j][1]))
            count += 1
    if count == 0:
        raise DataError("no cross-policy pairs available")
    return total / count


def reward_engineering_penalty(action, dq, c5: float, c6: float) -> float:
    """Torque-proxy penalty c5*||a||^2 + c6*(a . dq) for one frame.

    Kinematic stand-ins: the action vector for torque, the joint delta for
    velocity. Positive value; callers subtract it from the task reward.
    """
    a = np.asarray(action, dtype=np.float64)
    dq = np.asarray(dq, dtype=np.float64)
    return c5 * float(np.sum(a * a)) + c6 * float(np.dot(a, dq))


def rm_oracle_consistency(score_traj, policy_sets, oracle_config: OracleConfig,
                          n_pairs: int = 100, seed: int = 0) -> dict:
    """Spearman rank correlation between per-set mean RM score and per-set mean
    oracle preference score against the other sets.

    `score_traj` maps a Trajectory to a scalar (a reward model's mean window
    score, or any stand-in scorer).
    """
    if len(policy_sets) < 3:
        raise DataError("consistency needs >=3 policy sets")
    labeler = make_oracle_labeler(oracle_config)
    rm_means = [float(np.mean([score_traj(t) for t in group]))
                for group in policy_sets]
    chf_means = []
    for i, group in enumerate(policy_sets):
        scores = [human_preference_score(group, other, labeler, n_pairs,
                                         seed + 1000 * i + k)
                  for k, other in enumerate(policy_sets) if other is not group]
        chf_means.append(float(np.mean(scores)))
    rho, pvalue = scipy_stats.spearmanr(rm_means, chf_means)
    return {"spearman_rho": float(rho), "pvalue": float(pvalue),
            "rm_means": rm_means, "chf_means": chf_means}
