import math
import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prefloop import nn
from prefloop.errors import (ConfigurationError, DimensionError, StorageError,
                             TrainingError)

from helpers import assert_grads_close, finite_difference_grads


def test_zero_weight_net_gives_zero_output():
    net = nn.Mlp([3, 4, 2], "tanh", "tanh", rng=np.random.default_rng(0))
    net.set_parameters([np.zeros_like(p) for p in net.parameters()])
    out = net.forward(np.random.default_rng(1).standard_normal((5, 3)))
    assert np.array_equal(out, np.zeros((5, 2)))


def test_affine_identity_net():
    net = nn.Mlp([1, 1], "tanh", "identity", rng=np.random.default_rng(0))
    net.set_parameters([np.array([[2.0]]), np.array([1.0])])
    assert net.forward(np.array([[3.0]]))[0, 0] == 7.0


def test_forward_matches_hand_rolled_matmul():
    rng = np.random.default_rng(42)
    net = nn.Mlp([4, 8, 2], "tanh", "identity", rng=rng)
    x = rng.standard_normal((6, 4))
    h = np.tanh(x @ net.weights[0].T + net.biases[0])
    expected = h @ net.weights[1].T + net.biases[1]
    assert np.max(np.abs(net.forward(x) - expected)) < 1e-12


def test_forward_shape_mismatch_raises():
    net = nn.Mlp([3, 2], rng=np.random.default_rng(0))
    with pytest.raises(DimensionError, match="expected input"):
        net.forward(np.zeros((4, 5)))


def test_backward_zero_upstream_gives_zero_grads():
    net = nn.Mlp([3, 5, 2], rng=np.random.default_rng(0))
    grads, dx = net.backward(np.ones((4, 3)), np.zeros((4, 2)))
    assert all(np.array_equal(g, np.zeros_like(g)) for g in grads)
    assert np.array_equal(dx, np.zeros((4, 3)))


def test_backward_scalar_chain_rule():
    net = nn.Mlp([1, 1], "tanh", "identity", rng=np.random.default_rng(0))
    net.set_parameters([np.array([[1.5]]), np.array([0.0])])
    grads, _ = net.backward(np.array([[3.0]]), np.array([[1.0]]))
    assert grads[0][0, 0] == 3.0  # dL/dw = x
    assert grads[1][0] == 1.0


@pytest.mark.parametrize("dims,hidden,out", [
    ([6, 16, 16, 1], "tanh", "tanh"),
    ([6, 16, 16, 1], "relu", "identity"),
    ([4, 8, 3], "tanh", "identity"),
])
def test_backward_matches_finite_differences(dims, hidden, out):
    rng = np.random.default_rng(7)
    net = nn.Mlp(dims, hidden, out, rng=rng)
    x = rng.standard_normal((5, dims[0]))
    upstream = rng.standard_normal((5, dims[-1]))

    def loss():
        return float(np.sum(net.forward(x) * upstream))

    analytic, _ = net.backward(x, upstream)
    numeric = finite_difference_grads(loss, net.parameters(), probe_limit=12)
    assert_grads_close(analytic, numeric, probe_limit=12)


def test_forward_deterministic_and_finite():
    rng = np.random.default_rng(1)
    net = nn.Mlp([5, 32, 32, 2], rng=rng)
    x = rng.standard_normal((10, 5)) * 100
    a = net.forward(x)
    b = net.forward(x)
    assert np.array_equal(a, b)
    assert np.all(np.isfinite(a))


def test_weight_init_is_fan_in_bounded():
    net = nn.Mlp([100, 50, 10], rng=np.random.default_rng(0))
    for k, w in enumerate(net.weights):
        bound = math.sqrt(1.0 / net.layer_dims[k])
        assert np.max(np.abs(w)) <= bound


def test_invalid_construction():
    with pytest.raises(ConfigurationError):
        nn.Mlp([3], rng=np.random.default_rng(0))
    with pytest.raises(ConfigurationError):
        nn.Mlp([3, 0, 2], rng=np.random.default_rng(0))
    with pytest.raises(ConfigurationError):
        nn.Mlp([3, 2], hidden_activation="sigmoid", rng=np.random.default_rng(0))
    with pytest.raises(ConfigurationError):
        nn.Mlp([3, 2], output_activation="relu", rng=np.random.default_rng(0))


# --- Adam -----------------------------------------------------------------


def test_adam_zero_gradient_keeps_params():
    params = [np.array([1.0, -2.0]), np.array([[3.0]])]
    state = nn.adam_init(params, lr=0.1)
    out = nn.adam_step(state, params, [np.zeros(2), np.zeros((1, 1))])
    assert np.array_equal(out[0], params[0])
    assert np.array_equal(out[1], params[1])
    assert state.step == 1


def test_adam_first_step_bias_corrected():
    params = [np.array([0.0])]
    state = nn.adam_init(params, lr=0.1)
    out = nn.adam_step(state, params, [np.array([1.0])])
    # First step moves by ~lr regardless of gradient scale.
    assert abs(out[0][0] + 0.1 * (1.0 / (1.0 + 1e-8))) < 1e-12


def test_adam_optimizes_quadratic():
    theta = [np.array([0.0])]
    state = nn.adam_init(theta, lr=0.1)
    gaps = []
    for _ in range(100):
        grad = [2.0 * (theta[0] - 2.0)]
        theta = nn.adam_step(state, theta, grad)
        gaps.append(abs(theta[0][0] - 2.0))
    assert gaps[-1] < 0.5
    # Monotone trend: late gaps are below early gaps.
    assert np.mean(gaps[-10:]) < np.mean(gaps[:10])
    assert state.step == 100


def test_adam_rejects_non_finite_gradient():
    params = [np.zeros(3), np.zeros(2)]
    state = nn.adam_init(params, lr=0.1)
    with pytest.raises(TrainingError, match="block 1"):
        nn.adam_step(state, params, [np.zeros(3), np.array([1.0, np.nan])])


def test_adam_state_shape_mismatch():
    params = [np.zeros(3)]
    state = nn.adam_init(params, lr=0.1)
    with pytest.raises(DimensionError):
        nn.adam_step(state, params + [np.zeros(1)], [np.zeros(3), np.zeros(1)])


# --- schedule & clipping -----------------------------------------------------


def test_lr_step_decay_values():
    sched = nn.StepDecaySchedule(1e-3, 1000, 0.5)
    assert sched.rate(0) == 1e-3
    assert sched.rate(1000) == 5e-4
    assert sched.rate(2999) == 2.5e-4


@given(st.integers(min_value=0, max_value=10_000))
@settings(max_examples=60, deadline=None)
def test_lr_schedule_non_increasing_piecewise(epoch):
    sched = nn.StepDecaySchedule(1e-3, 100, 0.5)
    assert sched.rate(epoch + 1) <= sched.rate(epoch)
    if (epoch + 1) % 100 != 0:
        assert sched.rate(epoch + 1) == sched.rate(epoch)
    else:
        assert sched.rate(epoch + 1) < sched.rate(epoch)


def test_clip_by_global_norm():
    grads = [np.array([3.0, 0.0]), np.array([4.0])]
    clipped, norm = nn.clip_by_global_norm(grads, 1.0)
    assert norm == 5.0
    total = math.sqrt(sum(float(np.sum(g * g)) for g in clipped))
    assert abs(total - 1.0) < 1e-12
    same, _ = nn.clip_by_global_norm(grads, 10.0)
    assert same is grads


# --- serialization ---------------------------------------------------------


def test_parameter_container_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(3)
    net = nn.Mlp([4, 7, 2], "relu", "tanh", rng=rng)
    path = tmp_path / "net.json"
    nn.save_container(path, "test-net", {"net": nn.mlp_to_dict(net)})
    doc = nn.load_container(path, "test-net")
    loaded = nn.mlp_from_dict(doc["net"])
    assert loaded.layer_dims == net.layer_dims
    assert loaded.hidden_activation == "relu"
    assert loaded.output_activation == "tanh"
    for a, b in zip(net.parameters(), loaded.parameters()):
        assert np.array_equal(a, b)
    x = rng.standard_normal((3, 4))
    assert np.array_equal(net.forward(x), loaded.forward(x))


def test_container_version_and_kind_checks(tmp_path):
    path = tmp_path / "net.json"
    nn.save_container(path, "test-net", {"x": 1})
    with pytest.raises(StorageError, match="kind"):
        nn.load_container(path, "other-kind")
    import json
    doc = json.load(open(path))
    doc["version"] = 99
    json.dump(doc, open(path, "w"))
    with pytest.raises(StorageError, match="version"):
        nn.load_container(path, "test-net")
    path2 = tmp_path / "junk.json"
    path2.write_text("{not json")
    with pytest.raises(StorageError):
        nn.load_container(path2, "test-net")
