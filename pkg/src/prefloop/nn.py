"""Dense-network substrate: MLP forward/backward, Adam, step-decay LR, parameter io.

Everything is float64 and batch-major (rows are samples). Gradients are
computed analytically; tests check them against central finite differences.
"""

import base64
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DimensionError, StorageError, TrainingError

HIDDEN_ACTIVATIONS = ("tanh", "relu")
OUTPUT_ACTIVATIONS = ("tanh", "identity")

PARAMS_FORMAT = "prefloop-params"
PARAMS_VERSION = 1


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "identity":
        return z
    raise ConfigurationError(f"unknown activation {name!r}")


def _activate_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    # a is the post-activation value for z.
    if name == "tanh":
        return 1.0 - a * a
    if name == "relu":
        return (z > 0.0).astype(np.float64)
    if name == "identity":
        return np.ones_like(z)
    raise ConfigurationError(f"unknown activation {name!r}")


class Mlp:
    """Fully connected net. Weight k has shape (dims[k+1], dims[k]); forward is
    batch @ W.T + b per layer, hidden activation between layers, output
    activation on the last layer."""

    def __init__(self, layer_dims, hidden_activation="tanh",
                 output_activation="identity", rng=None):
        dims = [int(d) for d in layer_dims]
        if len(dims) < 2 or any(d <= 0 for d in dims):
            raise ConfigurationError(f"layer_dims must be >=2 positive ints, got {layer_dims}")
        if hidden_activation not in HIDDEN_ACTIVATIONS:
            raise ConfigurationError(f"hidden_activation must be one of {HIDDEN_ACTIVATIONS}")
        if output_activation not in OUTPUT_ACTIVATIONS:
            raise ConfigurationError(f"output_activation must be one of {OUTPUT_ACTIVATIONS}")
        self.layer_dims = dims
        self.hidden_activation = hidden_activation
        self.output_activation = output_activation
        if rng is None:
            rng = np.random.default_rng()
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            bound = np.sqrt(1.0 / fan_in)
            self.weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
            self.biases.append(rng.uniform(-bound, bound, size=fan_out))

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.layer_dims[0]:
            raise DimensionError(
                f"expected input of shape (B, {self.layer_dims[0]}), got {x.shape}")
        return x

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = self._check_input(x)
        h = x
        last = self.n_layers - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w.T + b
            act = self.output_activation if k == last else self.hidden_activation
            h = _activate(act, z)
        return h

    def _forward_cached(self, x):
        h = x
        pre = []
        post = [x]
        last = self.n_layers - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w.T + b
            act = self.output_activation if k == last else self.hidden_activation
            h = _activate(act, z)
            pre.append(z)
            post.append(h)
        return pre, post

    def backward(self, x: np.ndarray, upstream: np.ndarray):
        """Backprop `upstream` (dLoss/dOutput, shape (B, dims[-1])) through the net.

        Returns (grads, dx) where grads aligns with parameters(): the gradient
        of sum(upstream * output) wrt every weight and bias, summed over the batch.
        """
        x = self._check_input(x)
        pre, post = self._forward_cached(x)
        return self.backward_from_cache(pre, post, upstream)

    def backward_from_cache(self, pre, post, upstream: np.ndarray):
        """Backward pass reusing a _forward_cached result (avoids re-forwarding)."""
        upstream = np.asarray(upstream, dtype=np.float64)
        if upstream.shape != (post[0].shape[0], self.layer_dims[-1]):
            raise DimensionError(
                f"expected upstream of shape ({post[0].shape[0]}, {self.layer_dims[-1]}),"
                f" got {upstream.shape}")
        grads_w = [None] * self.n_layers
        grads_b = [None] * self.n_layers
        last = self.n_layers - 1
        delta = upstream
        for k in range(last, -1, -1):
            act = self.output_activation if k == last else self.hidden_activation
            delta = delta * _activate_grad(act, pre[k], post[k + 1])
            grads_w[k] = delta.T @ post[k]
            grads_b[k] = delta.sum(axis=0)
            delta = delta @ self.weights[k]
        grads = []
        for gw, gb in zip(grads_w, grads_b):
            grads.append(gw)
            grads.append(gb)
        return grads, delta

    def parameters(self):
        """Flat list [w0, b0, w1, b1, ...] of the live arrays."""
        params = []
        for w, b in zip(self.weights, self.biases):
            params.append(w)
            params.append(b)
        return params

    def set_parameters(self, params):
        if len(params) != 2 * self.n_layers:
            raise DimensionError(
                f"expected {2 * self.n_layers} parameter blocks, got {len(params)}")
        for k in range(self.n_layers):
            w = np.asarray(params[2 * k], dtype=np.float64)
            b = np.asarray(params[2 * k + 1], dtype=np.float64)
            if w.shape != self.weights[k].shape or b.shape != self.biases[k].shape:
                raise DimensionError(f"parameter block {k} shape mismatch")
            self.weights[k] = w
            self.biases[k] = b

    def copy(self) -> "Mlp":
        dup = Mlp.__new__(Mlp)
        dup.layer_dims = list(self.layer_dims)
        dup.hidden_activation = self.hidden_activation
        dup.output_activation = self.output_activation
        dup.weights = [w.copy() for w in self.weights]
        dup.biases = [b.copy() for b in self.biases]
        return dup


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_init(params, lr: float, beta1=0.9, beta2=0.999, eps=1e-8) -> AdamState:
    state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
    state.m = [np.zeros_like(p) for p in params]
    state.v = [np.zeros_like(p) for p in params]
    return state


def adam_step(state: AdamState, params, grads):
    """One bias-corrected Adam update. Mutates `state`, returns new param arrays."""
    if len(params) != len(state.m) or len(grads) != len(params):
        raise DimensionError("params/grads do not match optimizer state")
    for i, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in parameter block {i}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g
        m_hat = state.m[i] / (1.0 - b1 ** t)
        v_hat = state.v[i] / (1.0 - b2 ** t)
        out.append(p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps))
    return out


@dataclass(frozen=True)
class StepDecaySchedule:
    base_rate: float
    step_size: int
    gamma: float

    def rate(self, epoch: int) -> float:
        if epoch < 0:
            raise ConfigurationError(f"epoch must be >= 0, got {epoch}")
        return self.base_rate * self.gamma ** (epoch // self.step_size)


def clip_by_global_norm(grads, max_norm: float):
    """Scale the whole gradient list so its global L2 norm is at most max_norm."""
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if total <= max_norm or total == 0.0:
        return grads, total
    scale = max_norm / total
    return [g * scale for g in grads], total


# --- parameter containers ---------------------------------------------------

def encode_array(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a, dtype=np.float64)
    return {"shape": list(a.shape),
            "data": base64.b64encode(a.tobytes()).decode("ascii")}


def decode_array(d: dict) -> np.ndarray:
    raw = base64.b64decode(d["data"])
    a = np.frombuffer(raw, dtype=np.float64).copy()
    return a.reshape(d["shape"])


def mlp_to_dict(net: Mlp) -> dict:
    return {
        "layer_dims": list(net.layer_dims),
        "hidden_activation": net.hidden_activation,
        "output_activation": net.output_activation,
        "weights": [encode_array(w) for w in net.weights],
        "biases": [encode_array(b) for b in net.biases],
    }


def mlp_from_dict(d: dict) -> Mlp:
    net = Mlp(d["layer_dims"], d["hidden_activation"], d["output_activation"],
              rng=np.random.default_rng(0))
    net.weights = [decode_array(w) for w in d["weights"]]
    net.biases = [decode_array(b) for b in d["biases"]]
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        want_w = (net.layer_dims[k + 1], net.layer_dims[k])
        if w.shape != want_w or b.shape != (net.layer_dims[k + 1],):
            raise StorageError(f"stored parameter block {k} has shape {w.shape}, expected {want_w}")
    return net


def save_container(path, kind: str, payload: dict) -> None:
    doc = {"format": PARAMS_FORMAT, "version": PARAMS_VERSION, "kind": kind}
    doc.update(payload)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_container(path, kind: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise StorageError(f"cannot read parameter container {path}: {exc}") from exc
    if doc.get("format") != PARAMS_FORMAT:
        raise StorageError(f"{path}: not a {PARAMS_FORMAT} container")
    if doc.get("version") != PARAMS_VERSION:
        raise StorageError(f"{path}: unsupported container version {doc.get('version')}")
    if doc.get("kind") != kind:
        raise StorageError(f"{path}: container kind {doc.get('kind')!r}, expected {kind!r}")
    return doc
