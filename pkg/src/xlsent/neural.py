"""Small dense-network substrate: forward/backward passes, losses, SGD, gradient checking.

Everything runs in float64 on numpy. Inputs may be a single vector or a
batch with one example per row.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from xlsent._io import atomic_write_json, read_json
from xlsent.embed_store import load_matrix, save_matrix
from xlsent.errors import NumericalError

ACTIVATIONS = ("relu", "tanh", "identity")
LOSSES = ("softmax_cross_entropy", "mse_of_cosine", "mse")


@dataclass(eq=False)
class DenseLayer:
    weights: np.ndarray
    bias: np.ndarray
    activation: str = "identity"

    def __post_init__(self):
        self.weights = np.array(self.weights, dtype=np.float64)
        self.bias = np.array(self.bias, dtype=np.float64).reshape(-1)
        if self.weights.ndim != 2 or self.weights.shape[1] != self.bias.shape[0]:
            raise ValueError(f"inconsistent layer shapes {self.weights.shape} / {self.bias.shape}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias))):
            raise NumericalError("layer parameters must be finite")

    @property
    def in_dim(self):
        return self.weights.shape[0]

    @property
    def out_dim(self):
        return self.weights.shape[1]


@dataclass(eq=False)
class FeedForwardNet:
    """Stack of dense layers.

    Dropout, when enabled, is applied in train mode to the input of layer
    `dropout_position`.
    """

    layers: list
    dropout_rate: float = 0.0
    dropout_position: int | None = None

    def __post_init__(self):
        self.layers = list(self.layers)
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_dim != b.in_dim:
                raise ValueError(f"layer dims do not chain: {a.out_dim} -> {b.in_dim}")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.dropout_position is not None and not 0 <= self.dropout_position < len(self.layers):
            raise ValueError(f"dropout_position {self.dropout_position} out of range")
        if self.dropout_rate > 0 and self.dropout_position is None:
            raise ValueError("dropout_rate > 0 requires a dropout_position")

    @property
    def in_dim(self):
        return self.layers[0].in_dim

    @property
    def out_dim(self):
        return self.layers[-1].out_dim

    @property
    def dims(self):
        return [self.layers[0].in_dim] + [l.out_dim for l in self.layers] if self.layers else []

    def copy(self) -> FeedForwardNet:
        return copy.deepcopy(self)

    def without_dropout(self) -> FeedForwardNet:
        net = self.copy()
        net.dropout_rate = 0.0
        return net

    def parameters(self):
        """(array, name) for every parameter tensor, in layer order."""
        for i, layer in enumerate(self.layers):
            yield layer.weights, f"layer{i}.weights"
            yield layer.bias, f"layer{i}.bias"


def build_net(dims, activations, dropout_rate=0.0, dropout_position=None, seed=0) -> FeedForwardNet:
    """Glorot-uniform initialised net with zero biases."""
    if len(activations) != len(dims) - 1:
        raise ValueError("need one activation per layer")
    rng = np.random.default_rng(seed)
    layers = []
    for n_in, n_out, act in zip(dims, dims[1:], activations):
        limit = np.sqrt(6.0 / (n_in + n_out))
        layers.append(DenseLayer(rng.uniform(-limit, limit, (n_in, n_out)), np.zeros(n_out), act))
    return FeedForwardNet(layers, dropout_rate, dropout_position)


def identity_net(dim, n_layers=2, activation="identity") -> FeedForwardNet:
    return FeedForwardNet([DenseLayer(np.eye(dim), np.zeros(dim), activation) for _ in range(n_layers)])


def count_params(net: FeedForwardNet) -> int:
    return sum(l.in_dim * l.out_dim + l.out_dim for l in net.layers)


def _act(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return z


def _act_grad(name, z, a, g):
    if name == "relu":
        return g * (z > 0)
    if name == "tanh":
        return g * (1.0 - a * a)
    return g


@dataclass
class Cache:
    single: bool
    inputs: list = field(default_factory=list)
    pre: list = field(default_factory=list)
    post: list = field(default_factory=list)
    mask: np.ndarray | None = None


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def forward(net: FeedForwardNet, x, mode: str = "infer", seed=None):
    """Returns (output, cache). Train mode applies inverted dropout under `seed`."""
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    h = x[None, :] if single else x
    if h.ndim != 2 or h.shape[1] != net.in_dim:
        raise ValueError(f"input shape {x.shape} does not match input dim {net.in_dim}")
    if not np.all(np.isfinite(h)):
        raise NumericalError("non-finite network input")
    cache = Cache(single)
    for i, layer in enumerate(net.layers):
        if mode == "train" and net.dropout_rate > 0 and i == net.dropout_position:
            keep = 1.0 - net.dropout_rate
            cache.mask = (_rng(seed).random(h.shape) < keep) / keep
            h = h * cache.mask
        cache.inputs.append(h)
        z = h @ layer.weights + layer.bias
        h = _act(layer.activation, z)
        cache.pre.append(z)
        cache.post.append(h)
    return (h[0] if single else h), cache


def backward(net: FeedForwardNet, cache: Cache, loss_gradient):
    """Parameter gradients [(d_weights, d_bias), ...] plus the input gradient.

    Returns (param_grads, input_grad).
    """
    g = np.asarray(loss_gradient, dtype=np.float64)
    if cache.single:
        g = g[None, :]
    if len(cache.inputs) != len(net.layers) or g.shape != cache.post[-1].shape:
        raise ValueError("cache does not match this network / gradient shape")
    grads = [None] * len(net.layers)
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        if cache.inputs[i].shape[1] != layer.in_dim:
            raise ValueError("stale cache: layer shapes changed since forward")
        g = _act_grad(layer.activation, cache.pre[i], cache.post[i], g)
        grads[i] = (cache.inputs[i].T @ g, g.sum(axis=0))
        g = g @ layer.weights.T
        if cache.mask is not None and i == net.dropout_position:
            g = g * cache.mask
    return grads, (g[0] if cache.single else g)


# ---------------------------------------------------------------------------
# losses


def softmax(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, targets):
    """Mean cross-entropy over the batch; returns (loss, d_logits)."""
    logits = np.atleast_2d(logits)
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    z = logits - logits.max(axis=1, keepdims=True)
    log_p = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = logits.shape[0]
    loss = -log_p[np.arange(n), targets].mean()
    grad = np.exp(log_p)
    grad[np.arange(n), targets] -= 1.0
    return float(loss), grad / n


def mse(outputs, targets):
    """Mean over the batch of the squared error norm; returns (loss, d_outputs)."""
    outputs = np.atleast_2d(outputs)
    diff = outputs - np.asarray(targets, dtype=np.float64).reshape(outputs.shape)
    n = outputs.shape[0]
    return float((diff ** 2).sum() / n), 2.0 * diff / n


def cosine_mse(u, v, scores):
    """Mean squared error between row cosines of u, v and `scores`.

    Returns (loss, d_u, d_v). Zero rows yield cosine 0 and no gradient.
    """
    nu = np.linalg.norm(u, axis=1)
    nv = np.linalg.norm(v, axis=1)
    ok = (nu > 0) & (nv > 0)
    denom = np.where(ok, nu * nv, 1.0)
    cos = np.where(ok, (u * v).sum(axis=1) / denom, 0.0)
    n = u.shape[0]
    err = cos - np.asarray(scores, dtype=np.float64)
    loss = float((err ** 2).mean())
    coef = np.where(ok, 2.0 * err / n, 0.0)
    safe_nu2 = np.where(ok, nu ** 2, 1.0)
    safe_nv2 = np.where(ok, nv ** 2, 1.0)
    du = coef[:, None] * (v / denom[:, None] - cos[:, None] * u / safe_nu2[:, None])
    dv = coef[:, None] * (u / denom[:, None] - cos[:, None] * v / safe_nv2[:, None])
    return loss, du, dv


def _add(a, b):
    return [(wa + wb, ba + bb) for (wa, ba), (wb, bb) in zip(a, b)]


def loss_and_grads(net: FeedForwardNet, inputs, targets, loss: str, mode="infer", seed=None):
    """Loss value and parameter gradients for one batch.

    For ``mse_of_cosine`` each input is a (2, in_dim) array holding the two
    sides of a pair and each target is the similarity score; both sides pass
    through the same net.
    """
    if loss not in LOSSES:
        raise ValueError(f"unknown loss {loss!r}")
    inputs = np.asarray(inputs, dtype=np.float64)
    if loss == "mse_of_cosine":
        if inputs.ndim != 3 or inputs.shape[1] != 2:
            raise ValueError("mse_of_cosine expects inputs of shape (batch, 2, dim)")
        rng = _rng(seed)
        ua, ca = forward(net, inputs[:, 0], mode, rng)
        ub, cb = forward(net, inputs[:, 1], mode, rng)
        value, da, db = cosine_mse(ua, ub, targets)
        ga, _ = backward(net, ca, da)
        gb, _ = backward(net, cb, db)
        return value, _add(ga, gb)
    out, cache = forward(net, np.atleast_2d(inputs), mode, seed)
    if loss == "softmax_cross_entropy":
        value, d = softmax_cross_entropy(out, targets)
    else:
        value, d = mse(out, targets)
    grads, _ = backward(net, cache, d)
    return value, grads


def grad_check(net: FeedForwardNet, inputs, targets, loss: str, epsilon: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients."""
    if net.dropout_rate > 0:
        raise ValueError("disable dropout before gradient checking (use net.without_dropout())")
    net = net.copy()
    _, analytic = loss_and_grads(net, inputs, targets, loss)
    worst = 0.0
    for layer, (gw, gb) in zip(net.layers, analytic):
        for param, grad in ((layer.weights, gw), (layer.bias, gb)):
            flat = param.reshape(-1)
            gflat = grad.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + epsilon
                plus, _ = loss_and_grads(net, inputs, targets, loss)
                flat[i] = orig - epsilon
                minus, _ = loss_and_grads(net, inputs, targets, loss)
                flat[i] = orig
                numeric = (plus - minus) / (2 * epsilon)
                rel = abs(gflat[i] - numeric) / max(abs(gflat[i]), abs(numeric), 1e-12)
                worst = max(worst, rel)
    return worst


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainSpec:
    loss: str = "softmax_cross_entropy"
    epochs: int = 3
    batch_size: int = 32
    learning_rate: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ValueError("need epochs >= 0, batch_size >= 1, learning_rate > 0")


def train(net: FeedForwardNet, dataset, spec: TrainSpec):
    """Minibatch SGD with per-epoch shuffling. Returns (trained copy, loss_trace)."""
    if len(dataset) == 0:
        raise ValueError("empty training dataset")
    inputs = np.stack([np.asarray(x, dtype=np.float64) for x, _ in dataset])
    targets = np.array([t for _, t in dataset])
    net = net.copy()
    rng = np.random.default_rng(spec.seed)
    trace = []
    n = len(dataset)
    for _ in range(spec.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, spec.batch_size):
            idx = order[start:start + spec.batch_size]
            value, grads = loss_and_grads(net, inputs[idx], targets[idx], spec.loss, "train", rng)
            if not np.isfinite(value):
                raise NumericalError("training loss became non-finite")
            total += value * len(idx)
            for layer, (gw, gb) in zip(net.layers, grads):
                layer.weights -= spec.learning_rate * gw
                layer.bias -= spec.learning_rate * gb
        trace.append(total / n)
    return net, trace


# ---------------------------------------------------------------------------
# serialization


def save_net(net: FeedForwardNet, prefix) -> list[Path]:
    """Write `<prefix>.json` and one matrix file per parameter tensor."""
    prefix = Path(prefix)
    written = []
    for i, layer in enumerate(net.layers):
        for kind, arr in (("weights", layer.weights), ("bias", layer.bias[None, :])):
            path = prefix.with_name(f"{prefix.name}.layer{i}.{kind}.txt")
            save_matrix(arr, path)
            written.append(path)
    manifest = prefix.with_name(prefix.name + ".json")
    atomic_write_json(manifest, {
        "dims": net.dims,
        "activations": [l.activation for l in net.layers],
        "dropout_rate": net.dropout_rate,
        "dropout_position": net.dropout_position,
    })
    return [manifest] + written


def load_net(prefix) -> FeedForwardNet:
    prefix = Path(prefix)
    meta = read_json(prefix.with_name(prefix.name + ".json"))
    layers = []
    for i, act in enumerate(meta["activations"]):
        w = load_matrix(prefix.with_name(f"{prefix.name}.layer{i}.weights.txt"))
        b = load_matrix(prefix.with_name(f"{prefix.name}.layer{i}.bias.txt"))[0]
        if w.shape != (meta["dims"][i], meta["dims"][i + 1]):
            raise ValueError(f"{prefix}: layer {i} shape {w.shape} disagrees with manifest")
        layers.append(DenseLayer(w, b, act))
    return FeedForwardNet(layers, meta["dropout_rate"], meta["dropout_position"])
