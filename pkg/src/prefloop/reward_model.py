"""Task-agnostic human-likeness reward model: a Tanh MLP over stacked
state-action windows trained with the pairwise Bradley-Terry-Luce loss.
"""

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import DataError, DimensionError, TrainingError
from .trajectories import Trajectory, Verdict, window_matrix

RM_HIDDEN = (512, 512, 512, 128, 32)
FRAME_WIDTH = 6  # 3 joint angles + 3 actions per frame


@dataclass
class RmTrainConfig:
    batch_size: int = 256          # paper-scale profile uses 4096
    epochs: int = 2000             # paper-scale profile uses 50000
    lr: float = 1e-3
    lr_step_size: int = 1000
    lr_gamma: float = 0.5
    warm_start: bool = True
    holdout_fraction: float = 0.1
    eval_interval: int = 25
    window_size: int = 8
    pairs_per_record: int = 32
    hidden: tuple = RM_HIDDEN


class RewardModel:
    """Scalar scorer over window vectors; Tanh output keeps scores in (-1, 1)."""

    def __init__(self, window_size: int = 8, rng=None, net: nn.Mlp = None,
                 metadata: dict = None, hidden=RM_HIDDEN):
        self.window_size = window_size
        input_dim = FRAME_WIDTH * window_size
        if net is None:
            net = nn.Mlp([input_dim, *hidden, 1], "tanh", "tanh", rng=rng)
        if net.layer_dims[0] != input_dim:
            raise DimensionError(
                f"net input dim {net.layer_dims[0]} != window dim {input_dim}")
        self.net = net
        self.metadata = dict(metadata or {})

    @property
    def input_dim(self) -> int:
        return self.net.layer_dims[0]

    def score(self, window: np.ndarray) -> float:
        window = np.asarray(window, dtype=np.float64)
        if window.shape != (self.input_dim,):
            raise DimensionError(
                f"window must have shape ({self.input_dim},), got {window.shape}")
        return float(self.net.forward(window[None, :])[0, 0])

    def score_batch(self, windows: np.ndarray) -> np.ndarray:
        windows = np.asarray(windows, dtype=np.float64)
        return self.net.forward(windows)[:, 0]

    def score_trajectory(self, traj: Trajectory) -> float:
        """Mean window score over the whole trajectory."""
        return float(np.mean(self.score_batch(window_matrix(traj, self.window_size))))

    def copy(self) -> "RewardModel":
        return RewardModel(self.window_size, net=self.net.copy(),
                           metadata=dict(self.metadata))

    def save(self, path) -> None:
        nn.save_container(path, "reward-model", {
            "meta": {"window_size": self.window_size, **self.metadata},
            "net": nn.mlp_to_dict(self.net)})

    @staticmethod
    def load(path) -> "RewardModel":
        doc = nn.load_container(path, "reward-model")
        meta = dict(doc["meta"])
        window_size = meta.pop("window_size")
        return RewardModel(window_size, net=nn.mlp_from_dict(doc["net"]),
                           metadata=meta)


@dataclass
class WindowPair:
    winner: np.ndarray
    loser: np.ndarray
    record_id: str


def btl_loss(model: RewardModel, pairs) -> float:
    loss, _ = btl_loss_and_grads(model, pairs)
    return loss


def btl_loss_and_grads(model: RewardModel, pairs):
    """Mean of -log sigmoid(score_win - score_lose) plus gradients through the net."""
    if len(pairs) == 0:
        raise DataError("empty pair batch")
    winners = np.stack([p.winner for p in pairs])
    losers = np.stack([p.loser for p in pairs])
    b = len(pairs)
    stacked = np.concatenate([winners, losers])
    pre, post = model.net._forward_cached(
        np.asarray(stacked, dtype=np.float64))
    scores = post[-1][:, 0]
    diff = scores[:b] - scores[b:]
    loss = float(np.mean(np.logaddexp(0.0, -diff)))
    # d loss / d s_w = -(1 - sigmoid(diff)) / B, mirrored for s_l.
    g = -(1.0 / (1.0 + np.exp(diff))) / b
    upstream = np.concatenate([g, -g])[:, None]
    grads, _ = model.net.backward_from_cache(pre, post, upstream)
    return loss, grads


def pairwise_accuracy(model: RewardModel, pairs) -> float:
    """Fraction of pairs ranked correctly; exact ties earn half credit."""
    if len(pairs) == 0:
        raise DataError("cannot score an empty pair set")
    winners = np.stack([p.winner for p in pairs])
    losers = np.stack([p.loser for p in pairs])
    diff = model.net.forward(winners)[:, 0] - model.net.forward(losers)[:, 0]
    return float(np.mean(np.where(diff > 0, 1.0, np.where(diff == 0, 0.5, 0.0))))


def build_pair_dataset(preferences, trajectories, m: int, seed: int,
                       pairs_per_record: int = 32):
    """Window-level training pairs from trajectory-level preferences.

    NOT_SURE records are dropped. Each decisive record yields pairs_per_record
    pairs; both windows are sampled uniformly from their trajectories and the
    winner side follows the record verdict.
    """
    by_id = {t.trajectory_id: t for t in trajectories}
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    windows_cache = {}

    def windows_of(traj_id):
        if traj_id not in windows_cache:
            windows_cache[traj_id] = window_matrix(by_id[traj_id], m)
        return windows_cache[traj_id]

    pairs = []
    for pref in preferences:
        if pref.verdict == Verdict.NOT_SURE:
            continue
        for tid in (pref.left_id, pref.right_id):
            if tid not in by_id:
                raise DataError(
                    f"preference {pref.pair_id} references missing trajectory {tid}")
        win_id, lose_id = ((pref.left_id, pref.right_id)
                           if pref.verdict == Verdict.LEFT
                           else (pref.right_id, pref.left_id))
        w_mat = windows_of(win_id)
        l_mat = windows_of(lose_id)
        w_idx = rng.integers(0, w_mat.shape[0], size=pairs_per_record)
        l_idx = rng.integers(0, l_mat.shape[0], size=pairs_per_record)
        for wi, li in zip(w_idx, l_idx):
            pairs.append(WindowPair(winner=w_mat[wi], loser=l_mat[li],
                                    record_id=pref.pair_id))
    return pairs


def dataset_hash(pairs) -> str:
    h = hashlib.sha256()
    for p in pairs:
        h.update(p.record_id.encode())
        h.update(np.ascontiguousarray(p.winner).tobytes())
        h.update(np.ascontiguousarray(p.loser).tobytes())
    return h.hexdigest()[:16]


def split_by_record(pairs, holdout_fraction: float, rng):
    """Train/holdout split at the preference-record level so windows of one
    record never straddle the split."""
    record_ids = sorted({p.record_id for p in pairs})
    rng.shuffle(record_ids)
    n_hold = max(1, int(round(holdout_fraction * len(record_ids))))
    holdout_ids = set(record_ids[:n_hold])
    train = [p for p in pairs if p.record_id not in holdout_ids]
    hold = [p for p in pairs if p.record_id in holdout_ids]
    return train, hold


def train_rm(config: RmTrainConfig, dataset, warm_start_model: RewardModel = None,
             seed: int = 0):
    """Adam + step-decay training; returns (model at best holdout loss, curve).

    One epoch is one optimizer step on a sampled minibatch; the holdout is
    evaluated every eval_interval epochs.
    """
    if not dataset:
        raise DataError("reward-model dataset is empty")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    train, hold = split_by_record(dataset, config.holdout_fraction, rng)
    if not train or not hold:
        raise DataError("dataset too small to split into train/holdout")
    if warm_start_model is not None and config.warm_start:
        model = warm_start_model.copy()
    else:
        model = RewardModel(config.window_size, rng=rng, hidden=config.hidden)
    params = model.net.parameters()
    opt = nn.adam_init(params, lr=config.lr)
    schedule = nn.StepDecaySchedule(config.lr, config.lr_step_size, config.lr_gamma)
    best_hold_loss = math.inf
    best_params = [p.copy() for p in params]
    curve = []
    initial_loss = None
    bad_epochs = 0
    for epoch in range(config.epochs):
        idx = rng.integers(0, len(train), size=min(config.batch_size, len(train)))
        batch = [train[i] for i in idx]
        loss, grads = btl_loss_and_grads(model, batch)
        if initial_loss is None:
            initial_loss = loss
        if loss > 10.0 * max(initial_loss, 1e-12):
            bad_epochs += 1
            if bad_epochs >= 100:
                raise TrainingError(
                    f"reward-model training diverged (loss {loss:.3g} stayed above"
                    f" 10x the initial {initial_loss:.3g} for 100 epochs)")
        else:
            bad_epochs = 0
        opt.lr = schedule.rate(epoch)
        params = nn.adam_step(opt, params, grads)
        model.net.set_parameters(params)
        if (epoch + 1) % config.eval_interval == 0 or epoch == config.epochs - 1:
            hold_loss = btl_loss(model, hold)
            hold_acc = pairwise_accuracy(model, hold)
            curve.append({"epoch": epoch + 1, "train_loss": loss,
                          "holdout_loss": hold_loss, "holdout_accuracy": hold_acc,
                          "lr": opt.lr})
            if hold_loss < best_hold_loss:
                best_hold_loss = hold_loss
                best_params = [p.copy() for p in params]
    model.net.set_parameters(best_params)
    final_acc = pairwise_accuracy(model, hold)
    model.metadata.update({
        "holdout_loss": best_hold_loss,
        "holdout_accuracy": final_acc,
        "dataset_hash": dataset_hash(dataset),
        "epochs": config.epochs,
        "warm_started": bool(warm_start_model is not None and config.warm_start),
    })
    return model, curve


def rm_eval_accuracy(model: RewardModel, pairs) -> float:
    """Held-out pairwise accuracy; ties count half."""
    return pairwise_accuracy(model, pairs)
