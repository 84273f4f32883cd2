"""Small feedforward network predicting the currents at k+1.

Plain numpy with hand-written backpropagation. Inputs are standardised with
constants stored in the network spec so a saved network is self-contained.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .dataset import Dataset

# Feature names; "n_k" and "n_prev" expand to 7 one-hot channels each.
SCALAR_FEATURES = ("i_d", "i_q", "sin", "cos", "eps")
ONE_HOT_FEATURES = ("n_k", "n_prev")
DEFAULT_FEATURES = ("i_d", "i_q", "sin", "cos", "n_k", "n_prev")
ACTIVATIONS = ("tanh", "relu", "identity")


class TrainingError(RuntimeError):
    pass


def feature_width(features) -> int:
    width = 0
    for f in features:
        if f in SCALAR_FEATURES:
            width += 1
        elif f in ONE_HOT_FEATURES:
            width += 7
        else:
            raise ValueError(f"unknown feature {f!r}")
    return width


def one_hot_mask(features) -> np.ndarray:
    return np.concatenate(
        [np.zeros(1, bool) if f in SCALAR_FEATURES else np.ones(7, bool) for f in features]
    )


def build_features(features, i_d, i_q, eps, n_k, n_prev) -> np.ndarray:
    """Raw (un-normalised) feature matrix of shape (N, width)."""
    i_d = np.atleast_1d(np.asarray(i_d, float))
    n = i_d.shape[0]
    cols = []
    for f in features:
        if f == "i_d":
            cols.append(i_d[:, None])
        elif f == "i_q":
            cols.append(np.atleast_1d(np.asarray(i_q, float))[:, None])
        elif f == "sin":
            cols.append(np.sin(np.atleast_1d(eps))[:, None])
        elif f == "cos":
            cols.append(np.cos(np.atleast_1d(eps))[:, None])
        elif f == "eps":
            cols.append(np.atleast_1d(np.asarray(eps, float))[:, None])
        elif f in ONE_HOT_FEATURES:
            idx = np.broadcast_to(np.asarray(n_k if f == "n_k" else n_prev, dtype=int), (n,))
            if np.any((idx < 1) | (idx > 7)):
                raise ValueError(f"{f} must be in 1..7")
            oh = np.zeros((n, 7))
            oh[np.arange(n), idx - 1] = 1.0
            cols.append(oh)
        else:
            raise ValueError(f"unknown feature {f!r}")
    return np.hstack(cols) if cols else np.empty((n, 0))


def dataset_features(features, ds: Dataset) -> np.ndarray:
    return build_features(features, ds.i_d_k, ds.i_q_k, ds.epsilon_k, ds.n_k, ds.n_k_prev)


def dataset_targets(ds: Dataset) -> np.ndarray:
    return np.column_stack([ds.i_d_k1, ds.i_q_k1])


@dataclass(frozen=True)
class MlpSpec:
    features: tuple = DEFAULT_FEATURES
    hidden: tuple = (64,)
    activation: str = "tanh"
    in_mean: np.ndarray | None = None
    in_scale: np.ndarray | None = None
    out_mean: np.ndarray = field(default_factory=lambda: np.zeros(2))
    out_scale: np.ndarray = field(default_factory=lambda: np.ones(2))

    def __post_init__(self):
        width = feature_width(self.features)
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if any(int(h) < 1 for h in self.hidden):
            raise ValueError("hidden widths must be >= 1")
        object.__setattr__(self, "features", tuple(self.features))
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.in_mean is None:
            object.__setattr__(self, "in_mean", np.zeros(width))
        if self.in_scale is None:
            object.__setattr__(self, "in_scale", np.ones(width))
        for name, size in (("in_mean", width), ("in_scale", width), ("out_mean", 2), ("out_scale", 2)):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (size,):
                raise ValueError(f"{name} must have shape ({size},), got {arr.shape}")
            object.__setattr__(self, name, arr)
        if np.any(self.in_scale <= 0) or np.any(self.out_scale <= 0):
            raise ValueError("normalisation scales must be > 0")

    @property
    def n_inputs(self) -> int:
        return feature_width(self.features)

    @property
    def layer_sizes(self) -> tuple:
        return (self.n_inputs, *self.hidden, 2)

    def normalize_inputs(self, x):
        return (x - self.in_mean) / self.in_scale

    def denormalize_inputs(self, z):
        return z * self.in_scale + self.in_mean

    def normalize_targets(self, y):
        return (y - self.out_mean) / self.out_scale

    def denormalize_targets(self, z):
        return z * self.out_scale + self.out_mean


def fit_normalization(spec: MlpSpec, x: np.ndarray, y: np.ndarray) -> MlpSpec:
    """Standardisation constants from training data; one-hot channels stay raw."""
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale = np.where(scale > 1e-12, scale, 1.0)
    oh = one_hot_mask(spec.features)
    mean[oh] = 0.0
    scale[oh] = 1.0
    out_scale = y.std(axis=0)
    out_scale = np.where(out_scale > 1e-12, out_scale, 1.0)
    return replace(spec, in_mean=mean, in_scale=scale, out_mean=y.mean(axis=0), out_scale=out_scale)


def _act(name, z):
    if name == "tanh":
        return np.tanh(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    return z


def _act_grad(name, z, a):
    if name == "tanh":
        return 1.0 - a * a
    if name == "relu":
        return (z > 0).astype(float)
    return np.ones_like(z)


class Network:
    """Dense layers ``a_{l+1} = act(a_l W_l^T + b_l)``; last layer is linear."""

    def __init__(self, spec: MlpSpec, weights, biases):
        self.spec = spec
        self.weights = [np.array(w, dtype=float) for w in weights]
        self.biases = [np.array(b, dtype=float) for b in biases]
        sizes = spec.layer_sizes
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(self.weights):
            raise ValueError("number of weight blocks does not match the layer sizes")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (sizes[i + 1], sizes[i]) or b.shape != (sizes[i + 1],):
                raise ValueError(f"layer {i} has shape {w.shape}/{b.shape}, expected ({sizes[i + 1]}, {sizes[i]})")

    @classmethod
    def initialize(cls, spec: MlpSpec, seed: int = 0) -> Network:
        rng = np.random.default_rng(seed)
        sizes = spec.layer_sizes
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
        return cls(spec, weights, biases)

    @classmethod
    def zeros(cls, spec: MlpSpec) -> Network:
        sizes = spec.layer_sizes
        return cls(
            spec,
            [np.zeros((o, i)) for i, o in zip(sizes[:-1], sizes[1:])],
            [np.zeros(o) for o in sizes[1:]],
        )

    def copy(self) -> Network:
        return Network(self.spec, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def _forward_normalized(self, z):
        pre, post = [], [z]
        a = z
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            s = a @ w.T + b
            a = s if i == last else _act(self.spec.activation, s)
            pre.append(s)
            post.append(a)
        return pre, post

    def forward(self, features) -> np.ndarray:
        x = np.atleast_2d(np.asarray(features, dtype=float))
        if x.shape[1] != self.spec.n_inputs:
            raise ValueError(f"expected {self.spec.n_inputs} input features, got {x.shape[1]}")
        _, post = self._forward_normalized(self.spec.normalize_inputs(x))
        return self.spec.denormalize_targets(post[-1])

    def loss_and_gradients(self, features, targets):
        """Mean squared error on normalised targets and its parameter gradients."""
        x = self.spec.normalize_inputs(np.atleast_2d(features))
        y = self.spec.normalize_targets(np.atleast_2d(targets))
        pre, post = self._forward_normalized(x)
        err = post[-1] - y
        loss = float(np.mean(err * err))
        delta = 2.0 * err / err.size
        grads = [None] * (2 * len(self.weights))
        for i in range(len(self.weights) - 1, -1, -1):
            grads[2 * i] = delta.T @ post[i]
            grads[2 * i + 1] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ self.weights[i]) * _act_grad(self.spec.activation, pre[i - 1], post[i])
        return loss, grads


def forward(net: Network, features) -> tuple[np.ndarray, np.ndarray]:
    out = net.forward(features)
    return out[:, 0], out[:, 1]


def gradient_check(net: Network, features, targets, eps: float = 1e-5, max_params: int = 500) -> float:
    """Largest relative gap between backprop and central finite differences."""
    if not 1e-7 <= eps <= 1e-4:
        raise ValueError("eps must lie in [1e-7, 1e-4]")
    if net.n_params > max_params:
        raise ValueError(f"gradient check limited to {max_params} parameters, net has {net.n_params}")
    probe = net.copy()
    _, analytic = probe.loss_and_gradients(features, targets)
    worst = 0.0
    for p, g in zip(probe.parameters(), analytic):
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            up, _ = probe.loss_and_gradients(features, targets)
            flat[j] = orig - eps
            down, _ = probe.loss_and_gradients(features, targets)
            flat[j] = orig
            numeric = (up - down) / (2.0 * eps)
            denom = max(abs(numeric), abs(gflat[j]))
            if denom > 1e-12:
                worst = max(worst, abs(numeric - gflat[j]) / denom)
    return worst


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    batch_size: int = 256
    epochs: int = 50
    seed: int = 0
    validation_fraction: float = 0.1

    def __post_init__(self):
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError("optimizer must be 'sgd' or 'adam'")
        if not (self.learning_rate > 0 and self.batch_size >= 1 and self.epochs >= 0):
            raise ValueError("learning_rate and batch_size must be positive, epochs >= 0")
        if not 0 < self.validation_fraction < 1:
            raise ValueError("validation_fraction must lie in (0, 1)")


def split_indices(count: int, validation_fraction: float, seed: int):
    """Seeded (train, validation) index split."""
    order = np.random.default_rng(seed).permutation(count)
    n_val = int(round(count * validation_fraction))
    if count > 1:
        n_val = min(max(n_val, 1), count - 1)
    return np.sort(order[n_val:]), np.sort(order[:n_val])


def train(net: Network, ds: Dataset, cfg: TrainConfig):
    """Fit the weights by minibatch gradient descent.

    Returns ``(trained_net, history)`` with one ``(train_loss, val_loss)`` pair
    per epoch. The input network is not modified.
    """
    if len(ds) == 0:
        raise ValueError("cannot train on an empty dataset")
    net = net.copy()
    history: list[tuple[float, float]] = []
    if cfg.epochs == 0:
        return net, history
    x = dataset_features(net.spec.features, ds)
    y = dataset_targets(ds)
    tr, va = split_indices(len(ds), cfg.validation_fraction, cfg.seed)
    x_tr, y_tr, x_va, y_va = x[tr], y[tr], x[va], y[va]
    rng = np.random.default_rng(cfg.seed + 1)
    params = net.parameters()
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    step = 0
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(cfg.epochs):
            history.append(_run_epoch(net, params, m, v, x_tr, y_tr, x_va, y_va, rng, cfg, epoch, step))
            step += -(-len(tr) // cfg.batch_size)
    return net, history


def _run_epoch(net, params, m, v, x_tr, y_tr, x_va, y_va, rng, cfg, epoch, step):
    beta1, beta2, adam_eps = 0.9, 0.999, 1e-8
    order = rng.permutation(len(x_tr))
    for start in range(0, len(order), cfg.batch_size):
        batch = order[start : start + cfg.batch_size]
        loss, grads = net.loss_and_gradients(x_tr[batch], y_tr[batch])
        if not math.isfinite(loss):
            raise TrainingError(f"training diverged at epoch {epoch}: loss={loss}")
        step += 1
        for i, (p, g) in enumerate(zip(params, grads)):
            if cfg.optimizer == "sgd":
                p -= cfg.learning_rate * g
                continue
            m[i] = beta1 * m[i] + (1 - beta1) * g
            v[i] = beta2 * v[i] + (1 - beta2) * g * g
            m_hat = m[i] / (1 - beta1**step)
            v_hat = v[i] / (1 - beta2**step)
            p -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + adam_eps)
    train_loss, _ = net.loss_and_gradients(x_tr, y_tr)
    val_loss = net.loss_and_gradients(x_va, y_va)[0] if len(x_va) else float("nan")
    if not math.isfinite(train_loss):
        raise TrainingError(f"training diverged at epoch {epoch}: loss={train_loss}")
    return train_loss, val_loss


def fit_mlp(ds: Dataset, spec: MlpSpec = MlpSpec(), cfg: TrainConfig = TrainConfig()):
    """Normalise on the training split, initialise and train a network."""
    if len(ds) == 0:
        raise ValueError("cannot train on an empty dataset")
    tr, _ = split_indices(len(ds), cfg.validation_fraction, cfg.seed)
    train_part = ds.take(tr)
    spec = fit_normalization(spec, dataset_features(spec.features, train_part), dataset_targets(train_part))
    return train(Network.initialize(spec, cfg.seed), ds, cfg)


def _fmt(values) -> str:
    return " ".join(repr(float(v)) for v in np.ravel(values))


def dump_network(net: Network) -> str:
    """Self-describing text: spec header lines, then row-major weight blocks."""
    s = net.spec
    lines = [
        "mlp 1",
        "features " + ",".join(s.features),
        "activation " + s.activation,
        "layers " + ",".join(str(v) for v in s.layer_sizes),
        "in_mean " + _fmt(s.in_mean),
        "in_scale " + _fmt(s.in_scale),
        "out_mean " + _fmt(s.out_mean),
        "out_scale " + _fmt(s.out_scale),
    ]
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        lines.append(f"weight {i} {w.shape[0]} {w.shape[1]}")
        lines.extend(_fmt(row) for row in w)
        lines.append(f"bias {i} {b.shape[0]}")
        lines.append(_fmt(b))
    return "\n".join(lines) + "\n"


def parse_network(lines) -> Network:
    it = iter(line.rstrip("\n") for line in lines)
    header = {}
    if next(it).split() != ["mlp", "1"]:
        raise ValueError("not an mlp network block")
    for key in ("features", "activation", "layers", "in_mean", "in_scale", "out_mean", "out_scale"):
        name, _, value = next(it).partition(" ")
        if name != key:
            raise ValueError(f"expected {key!r} line, got {name!r}")
        header[key] = value
    sizes = [int(v) for v in header["layers"].split(",")]
    spec = MlpSpec(
        features=tuple(header["features"].split(",")),
        hidden=tuple(sizes[1:-1]),
        activation=header["activation"],
        in_mean=np.array(header["in_mean"].split(), float),
        in_scale=np.array(header["in_scale"].split(), float),
        out_mean=np.array(header["out_mean"].split(), float),
        out_scale=np.array(header["out_scale"].split(), float),
    )
    weights, biases = [], []
    for _ in range(len(sizes) - 1):
        _, _, rows, cols = next(it).split()
        weights.append(np.array([next(it).split() for _ in range(int(rows))], float).reshape(int(rows), int(cols)))
        next(it)
        biases.append(np.array(next(it).split(), float))
    return Network(spec, weights, biases)
