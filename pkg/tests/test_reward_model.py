import math

import numpy as np
import pytest

from prefloop import nn
from prefloop import reward_model as rm
from prefloop.errors import DataError, DimensionError, TrainingError
from prefloop.reward_model import (RewardModel, RmTrainConfig, WindowPair,
                                   btl_loss, btl_loss_and_grads,
                                   build_pair_dataset, pairwise_accuracy,
                                   rm_eval_accuracy, split_by_record, train_rm)
from prefloop.trajectories import PreferenceRecord, Trajectory, Verdict

from helpers import assert_grads_close, finite_difference_grads


def tiny_model(seed=0, window_size=2, hidden=(8, 4)):
    return RewardModel(window_size, rng=np.random.default_rng(seed), hidden=hidden)


def rand_pairs(rng, n, dim, record_prefix="rec", records=None):
    pairs = []
    for i in range(n):
        rec = f"{record_prefix}{i if records is None else i % records}"
        pairs.append(WindowPair(rng.uniform(-1, 1, dim), rng.uniform(-1, 1, dim), rec))
    return pairs


def test_zero_parameter_model_scores_zero():
    model = tiny_model()
    model.net.set_parameters([np.zeros_like(p) for p in model.net.parameters()])
    assert model.score(np.random.default_rng(0).uniform(-1, 1, 12)) == 0.0


def test_identical_windows_identical_scores():
    model = tiny_model(3)
    w = np.random.default_rng(1).uniform(-1, 1, 12)
    assert model.score(w) == model.score(w.copy())


def test_batched_equals_per_sample():
    model = tiny_model(5)
    rng = np.random.default_rng(2)
    batch = rng.uniform(-1, 1, size=(20, 12))
    batched = model.score_batch(batch)
    singles = np.array([model.score(w) for w in batch])
    assert np.max(np.abs(batched - singles)) < 1e-12


def test_scores_live_in_open_unit_interval():
    model = tiny_model(7)
    rng = np.random.default_rng(3)
    scores = model.score_batch(rng.uniform(-5, 5, size=(100, 12)))
    assert np.all(scores > -1.0) and np.all(scores < 1.0)


def test_score_dimension_check():
    model = tiny_model()
    with pytest.raises(DimensionError):
        model.score(np.zeros(13))


def test_default_architecture_matches_published_shape():
    model = RewardModel(8, rng=np.random.default_rng(0))
    assert model.net.layer_dims == [48, 512, 512, 512, 128, 32, 1]
    assert model.net.hidden_activation == "tanh"
    assert model.net.output_activation == "tanh"


# --- BTL loss -------------------------------------------------------------------


def test_btl_equal_scores_is_ln2():
    model = tiny_model()
    w = np.random.default_rng(4).uniform(-1, 1, 12)
    pairs = [WindowPair(w, w.copy(), "r")]
    assert abs(btl_loss(model, pairs) - math.log(2)) < 1e-9


def test_btl_large_margin():
    # -log sigmoid(10) computed on a stub net with fixed outputs
    class StubNet:
        layer_dims = [12, 1]

        def forward(self, x):
            out = np.zeros((x.shape[0], 1))
            out[: len(out) // 2] = 5.0
            out[len(out) // 2:] = -5.0
            return out

        def _forward_cached(self, x):
            return [], [x, self.forward(x)]

        def backward_from_cache(self, pre, post, upstream):
            return [], None

    model = RewardModel.__new__(RewardModel)
    model.window_size = 2
    model.net = StubNet()
    model.metadata = {}
    pairs = [WindowPair(np.zeros(12), np.zeros(12), "r")]
    loss, _ = btl_loss_and_grads(model, pairs)
    assert abs(loss - (-math.log(1.0 / (1.0 + math.exp(-10.0))))) < 1e-12
    assert abs(loss - 4.5398e-5) < 1e-8


def test_btl_empty_batch():
    with pytest.raises(DataError):
        btl_loss(tiny_model(), [])


def test_btl_gradients_match_finite_differences():
    model = tiny_model(11)
    rng = np.random.default_rng(5)
    pairs = rand_pairs(rng, 6, 12)

    def loss():
        return btl_loss(model, pairs)

    _, analytic = btl_loss_and_grads(model, pairs)
    numeric = finite_difference_grads(loss, model.net.parameters(), probe_limit=10)
    assert_grads_close(analytic, numeric, probe_limit=10)


def test_btl_antisymmetry_inequality():
    model = tiny_model(13)
    rng = np.random.default_rng(6)
    for _ in range(20):
        w = rng.uniform(-1, 1, 12)
        l = rng.uniform(-1, 1, 12)
        forward = btl_loss(model, [WindowPair(w, l, "r")])
        backward = btl_loss(model, [WindowPair(l, w, "r")])
        assert forward + backward >= 2 * math.log(2) - 1e-12
    w = rng.uniform(-1, 1, 12)
    eq = btl_loss(model, [WindowPair(w, w.copy(), "r")])
    assert abs(2 * eq - 2 * math.log(2)) < 1e-12


def test_shift_invariance_of_pair_orderings():
    # Adding a constant to all scores cannot change any pairwise ordering.
    rng = np.random.default_rng(14)

    class FixedNet:
        layer_dims = [12, 1]

        def __init__(self, shift):
            self.shift = shift
            self.values = rng.standard_normal(40)

        def forward(self, x):
            n = x.shape[0]
            return (self.values[:n] + self.shift)[:, None]

    base = RewardModel.__new__(RewardModel)
    base.window_size = 2
    base.metadata = {}
    shifted = RewardModel.__new__(RewardModel)
    shifted.window_size = 2
    shifted.metadata = {}
    base.net = FixedNet(0.0)
    shifted.net = FixedNet(7.3)
    pairs = rand_pairs(rng, 20, 12)
    assert pairwise_accuracy(base, pairs) == pairwise_accuracy(shifted, pairs)


# --- dataset construction ---------------------------------------------------------


def make_trajectory(rng, traj_id, h=20):
    return Trajectory(trajectory_id=traj_id, task_id="REACH3",
                      checkpoint_id="c", seed=0,
                      q_norm=rng.uniform(-1, 1, size=(h, 3)),
                      actions=rng.uniform(-1, 1, size=(h, 3)),
                      task_rewards=np.zeros(h),
                      object_states=np.zeros((h, 2)), success=True)


def pref(pid, left, right, verdict):
    return PreferenceRecord(pid, "REACH3", left, right, verdict, "oracle", "", 1)


def test_all_not_sure_gives_empty_dataset():
    rng = np.random.default_rng(7)
    trajs = [make_trajectory(rng, f"t{i}") for i in range(2)]
    prefs = [pref("p0", "t0", "t1", Verdict.NOT_SURE)]
    assert build_pair_dataset(prefs, trajs, 8, seed=0) == []


def test_single_decisive_record_emits_k_pairs():
    rng = np.random.default_rng(8)
    trajs = [make_trajectory(rng, f"t{i}") for i in range(2)]
    prefs = [pref("p0", "t0", "t1", Verdict.RIGHT)]
    pairs = build_pair_dataset(prefs, trajs, 8, seed=1, pairs_per_record=32)
    assert len(pairs) == 32
    # RIGHT verdict: winners come from t1
    from prefloop.trajectories import window_matrix
    w1 = window_matrix(trajs[1], 8)
    for p in pairs:
        assert any(np.array_equal(p.winner, row) for row in w1)
        assert p.record_id == "p0"


def test_pair_count_scales_with_decisive_records():
    rng = np.random.default_rng(9)
    trajs = [make_trajectory(rng, f"t{i}") for i in range(6)]
    prefs = []
    for i in range(10):
        verdict = [Verdict.LEFT, Verdict.RIGHT, Verdict.NOT_SURE][i % 3]
        prefs.append(pref(f"p{i}", f"t{i % 6}", f"t{(i + 1) % 6}", verdict))
    decisive = sum(1 for p in prefs if p.verdict != Verdict.NOT_SURE)
    pairs = build_pair_dataset(prefs, trajs, 8, seed=2, pairs_per_record=16)
    assert len(pairs) == 16 * decisive


def test_dangling_reference_rejected():
    rng = np.random.default_rng(10)
    trajs = [make_trajectory(rng, "t0")]
    with pytest.raises(DataError):
        build_pair_dataset([pref("p0", "t0", "ghost", Verdict.LEFT)], trajs, 8, 0)


def test_split_by_record_never_straddles():
    rng = np.random.default_rng(11)
    pairs = rand_pairs(rng, 100, 12, records=10)
    train, hold = split_by_record(pairs, 0.2, np.random.default_rng(0))
    train_ids = {p.record_id for p in train}
    hold_ids = {p.record_id for p in hold}
    assert not (train_ids & hold_ids)
    assert len(train) + len(hold) == 100


# --- training ----------------------------------------------------------------------


def separable_pairs(rng, n=60, dim=12, offset=0.5):
    pairs = []
    for i in range(n):
        base = rng.uniform(-0.5, 0.5, dim)
        winner = base.copy()
        winner[0] += offset
        pairs.append(WindowPair(winner, base, f"rec{i}"))
    return pairs


def small_cfg(**kw):
    defaults = dict(batch_size=32, epochs=250, eval_interval=25, window_size=2,
                    hidden=(16, 8))
    defaults.update(kw)
    return RmTrainConfig(**defaults)


def test_separable_training_reaches_perfect_holdout():
    rng = np.random.default_rng(12)
    pairs = separable_pairs(rng)
    model, curve = train_rm(small_cfg(), pairs, seed=3)
    assert model.metadata["holdout_accuracy"] == 1.0
    assert curve[-1]["epoch"] == 250


def test_initial_loss_near_ln2():
    rng = np.random.default_rng(13)
    pairs = separable_pairs(rng)
    _, curve = train_rm(small_cfg(epochs=25), pairs, seed=4)
    assert abs(curve[0]["train_loss"] - math.log(2)) < 0.05


def test_empty_dataset_rejected():
    with pytest.raises(DataError):
        train_rm(small_cfg(), [], seed=0)


def test_warm_start_uses_previous_model():
    rng = np.random.default_rng(14)
    pairs = separable_pairs(rng, offset=2.0)
    first, first_curve = train_rm(small_cfg(epochs=400), pairs, seed=5)
    warm, curve = train_rm(small_cfg(epochs=25), pairs,
                           warm_start_model=first, seed=6)
    # Warm start begins from trained weights: loss starts near the prior's end,
    # far below the fresh-model ln 2 start.
    assert curve[0]["train_loss"] < 0.45
    assert warm.metadata["warm_started"]


def test_warm_start_not_worse_than_cold_by_five_points():
    rng = np.random.default_rng(15)
    pairs = separable_pairs(rng, n=80)
    cold, _ = train_rm(small_cfg(), pairs, seed=7)
    prior, _ = train_rm(small_cfg(epochs=100), pairs, seed=8)
    warm, _ = train_rm(small_cfg(), pairs, warm_start_model=prior, seed=7)
    assert warm.metadata["holdout_accuracy"] >= \
        cold.metadata["holdout_accuracy"] - 0.05


def test_divergence_guard_triggers(monkeypatch):
    # Tanh-bounded scores cap the loss near 2.13, so organic divergence needs
    # a tiny initial loss; script the loss sequence to pin the guard contract:
    # loss above 10x the initial for 100 consecutive epochs raises.
    rng = np.random.default_rng(16)
    pairs = separable_pairs(rng)
    losses = iter([0.01] + [0.5] * 150)

    def scripted(model, batch):
        return next(losses), [np.zeros_like(p) for p in model.net.parameters()]

    monkeypatch.setattr(rm, "btl_loss_and_grads", scripted)
    with pytest.raises(TrainingError, match="diverged"):
        train_rm(small_cfg(epochs=150), pairs, seed=10)


def test_divergence_guard_resets_on_recovery(monkeypatch):
    rng = np.random.default_rng(17)
    pairs = separable_pairs(rng)
    # Dips above the threshold shorter than 100 epochs do not abort.
    pattern = [0.01] + ([0.5] * 99 + [0.01]) * 3
    losses = iter(pattern + [0.01] * 100)

    def scripted(model, batch):
        return next(losses), [np.zeros_like(p) for p in model.net.parameters()]

    monkeypatch.setattr(rm, "btl_loss_and_grads", scripted)
    model, _ = train_rm(small_cfg(epochs=len(pattern) + 50), pairs, seed=11)
    assert model is not None


# --- accuracy ----------------------------------------------------------------------


def test_accuracy_perfect_and_ties():
    model = tiny_model(17)
    rng = np.random.default_rng(18)
    pairs = rand_pairs(rng, 12, 12)
    scores_w = model.score_batch(np.stack([p.winner for p in pairs]))
    scores_l = model.score_batch(np.stack([p.loser for p in pairs]))
    ordered = [WindowPair(p.winner, p.loser, p.record_id) if sw > sl
               else WindowPair(p.loser, p.winner, p.record_id)
               for p, sw, sl in zip(pairs, scores_w, scores_l)]
    assert rm_eval_accuracy(model, ordered) == 1.0

    zero = tiny_model(19)
    zero.net.set_parameters([np.zeros_like(p) for p in zero.net.parameters()])
    assert rm_eval_accuracy(zero, pairs) == 0.5


def test_accuracy_matches_manual_count():
    model = tiny_model(20)
    rng = np.random.default_rng(21)
    pairs = rand_pairs(rng, 10, 12)
    manual = 0.0
    for p in pairs:
        d = model.score(p.winner) - model.score(p.loser)
        manual += 1.0 if d > 0 else (0.5 if d == 0 else 0.0)
    assert abs(rm_eval_accuracy(model, pairs) - manual / 10) < 1e-12


def test_accuracy_empty_set_rejected():
    with pytest.raises(DataError):
        rm_eval_accuracy(tiny_model(), [])


def test_model_save_load_roundtrip(tmp_path):
    model = tiny_model(22)
    model.metadata["holdout_accuracy"] = 0.93
    path = tmp_path / "rm.json"
    model.save(path)
    loaded = RewardModel.load(path)
    assert loaded.window_size == model.window_size
    assert loaded.metadata["holdout_accuracy"] == 0.93
    w = np.random.default_rng(1).uniform(-1, 1, 12)
    assert loaded.score(w) == model.score(w)
