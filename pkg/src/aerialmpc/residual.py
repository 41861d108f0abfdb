"""Learned velocity residual: a small ELU network trained offline with mini-batch SGD
and adapted online by SGD on its output layer only.

Feature order (30): Euler angles (3), quad linear velocity (3), body angular velocity (3),
joint angles (6), joint rates (6), most recently applied control input (9).
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

N_FEATURES = 30
N_OUT = 3
LAYER_SIZES = (N_FEATURES, 32, 32, N_OUT)
ARTIFACT_MAGIC = "AERIALMPC-RESIDUAL"
ARTIFACT_VERSION = 1


def elu(x):
    x = np.asarray(x, dtype=float)
    return np.where(x >= 0, x, np.expm1(np.minimum(x, 0.0)))


def elu_grad(x):
    x = np.asarray(x, dtype=float)
    return np.where(x >= 0, 1.0, np.exp(np.minimum(x, 0.0)))


def assemble_features(euler, v, omega, q, qdot, u) -> np.ndarray:
    f = np.concatenate([
        np.asarray(euler, float).reshape(3), np.asarray(v, float).reshape(3),
        np.asarray(omega, float).reshape(3), np.asarray(q, float).reshape(6),
        np.asarray(qdot, float).reshape(6), np.asarray(u, float).reshape(9),
    ])
    return f


def residual_target(v_measured, p_b_des, p_b, k_b):
    """Velocity residual left after the equivalent model explains the measured velocity.

    The discrete model predicts ``v_k = K_B (p_des_k - p_{k-1})``; passing the previous
    sample's position as ``p_b`` makes the target that model's one-step prediction error.
    """
    return np.asarray(v_measured, float) - np.asarray(k_b, float) * (
        np.asarray(p_b_des, float) - np.asarray(p_b, float))


@dataclass
class MlpParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    x_mean: np.ndarray = field(default_factory=lambda: np.zeros(N_FEATURES))
    x_scale: np.ndarray = field(default_factory=lambda: np.ones(N_FEATURES))

    def __post_init__(self):
        if len(self.weights) != len(self.biases):
            raise ValueError("weights and biases differ in length")
        sizes = [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (sizes[i + 1], sizes[i]) or b.shape != (sizes[i + 1],):
                raise ValueError(f"layer {i} has inconsistent shapes {w.shape}, {b.shape}")
        if self.x_mean.shape != (sizes[0],) or self.x_scale.shape != (sizes[0],):
            raise ValueError("normalization vectors do not match input size")

    @property
    def sizes(self) -> tuple[int, ...]:
        return (self.weights[0].shape[1],) + tuple(w.shape[0] for w in self.weights)

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                         self.x_mean.copy(), self.x_scale.copy())

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for pair in zip(self.weights, self.biases) for a in pair])

    def with_flat(self, theta) -> "MlpParams":
        out = self.copy()
        i = 0
        for arr in (a for pair in zip(out.weights, out.biases) for a in pair):
            arr[...] = np.asarray(theta[i:i + arr.size]).reshape(arr.shape)
            i += arr.size
        return out


def init_params(seed: int = 0, sizes=LAYER_SIZES) -> MlpParams:
    """Uniform fan-in initialization, U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        lim = 1.0 / np.sqrt(n_in)
        weights.append(rng.uniform(-lim, lim, size=(n_out, n_in)))
        biases.append(rng.uniform(-lim, lim, size=n_out))
    return MlpParams(weights, biases, np.zeros(sizes[0]), np.ones(sizes[0]))


def zero_params(sizes=LAYER_SIZES) -> MlpParams:
    return MlpParams([np.zeros((o, i)) for i, o in zip(sizes[:-1], sizes[1:])],
                     [np.zeros(o) for o in sizes[1:]], np.zeros(sizes[0]), np.ones(sizes[0]))


def _forward_cache(params: MlpParams, features):
    x = (np.atleast_2d(np.asarray(features, dtype=float)) - params.x_mean) / params.x_scale
    acts, pre = [x], []
    n = len(params.weights)
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = acts[-1] @ w.T + b
        pre.append(z)
        acts.append(elu(z) if i < n - 1 else z)
    return acts, pre


def forward(params: MlpParams, features) -> np.ndarray:
    """Predicted residual; accepts a single feature vector or a batch of rows."""
    out = _forward_cache(params, features)[0][-1]
    return out[0] if np.ndim(features) == 1 else out


def backward(params: MlpParams, features, target) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Gradient of the squared error summed over rows, ``sum ||forward - target||^2``."""
    acts, pre = _forward_cache(params, features)
    delta = 2.0 * (acts[-1] - np.atleast_2d(target))
    n = len(params.weights)
    gw, gb = [None] * n, [None] * n
    for i in reversed(range(n)):
        gw[i] = delta.T @ acts[i]
        gb[i] = delta.sum(axis=0)
        if i:
            delta = (delta @ params.weights[i]) * elu_grad(pre[i - 1])
    return gw, gb


def mse(params: MlpParams, features, targets) -> float:
    err = forward(params, np.atleast_2d(features)) - np.atleast_2d(targets)
    return float(np.mean(np.sum(err**2, axis=1)))


def fit_normalization(features) -> tuple[np.ndarray, np.ndarray]:
    features = np.atleast_2d(np.asarray(features, dtype=float))
    mean = features.mean(axis=0)
    scale = features.std(axis=0)
    scale[scale < 1e-9] = 1.0
    return mean, scale


def train_offline(features, targets, lr: float = 0.01, epochs: int = 50, batch_size: int = 64,
                  seed: int = 0, shuffle: bool = True, params: MlpParams | None = None,
                  log=None) -> MlpParams:
    """Mini-batch SGD on the mean squared error over all layers.

    Deterministic for a given seed. With ``shuffle=True`` the row order is permuted every
    epoch by a generator seeded with ``seed``; with ``shuffle=False`` rows are visited in
    file order. The best-MSE parameters seen at epoch boundaries are returned, so the final
    training MSE never exceeds the initial one.
    """
    X = np.atleast_2d(np.asarray(features, dtype=float))
    Y = np.atleast_2d(np.asarray(targets, dtype=float))
    if len(X) == 0:
        raise ValueError("cannot train on an empty dataset")
    if len(X) != len(Y):
        raise ValueError("features and targets differ in length")
    if params is None:
        params = init_params(seed)
        params.x_mean, params.x_scale = fit_normalization(X)
    else:
        params = params.copy()
    rng = np.random.default_rng(seed + 1)
    best, best_mse = params.copy(), mse(params, X, Y)
    for epoch in range(epochs):
        order = rng.permutation(len(X)) if shuffle else np.arange(len(X))
        for start in range(0, len(X), batch_size):
            idx = order[start:start + batch_size]
            gw, gb = backward(params, X[idx], Y[idx])
            scale = lr / len(idx)
            for w, b, dw, db in zip(params.weights, params.biases, gw, gb):
                w -= scale * dw
                b -= scale * db
        cur = mse(params, X, Y)
        if log is not None:
            log(epoch, cur)
        if cur <= best_mse:
            best, best_mse = params.copy(), cur
    return best


def online_update(params: MlpParams, features, targets, lr: float = 0.0015) -> MlpParams:
    """One SGD step on the output layer using the batch-mean gradient; other layers are shared."""
    features = np.atleast_2d(features)
    acts, _ = _forward_cache(params, features)
    delta = 2.0 * (acts[-1] - np.atleast_2d(targets))
    n = len(features)
    weights = list(params.weights)
    biases = list(params.biases)
    weights[-1] = params.weights[-1] - lr * (delta.T @ acts[-2]) / n
    biases[-1] = params.biases[-1] - lr * delta.sum(axis=0) / n
    return MlpParams(weights, biases, params.x_mean, params.x_scale)


class OnlineResidual:
    """Owns the network parameters and the sliding window of recent samples.

    The controller is the single writer; :meth:`snapshot` hands out an independent copy.
    """

    def __init__(self, params: MlpParams, lr: float = 0.0015, batch: int = 20):
        self.params = params.copy()
        self.lr = lr
        self.batch = batch
        self._feat: deque = deque(maxlen=batch)
        self._targ: deque = deque(maxlen=batch)
        self.updates = 0

    def observe(self, features, target) -> bool:
        """Add a sample and update the output layer once the window is full."""
        self._feat.append(np.asarray(features, dtype=float))
        self._targ.append(np.asarray(target, dtype=float))
        if len(self._feat) < self.batch:
            return False
        self.params = online_update(self.params, np.array(self._feat), np.array(self._targ), self.lr)
        self.updates += 1
        return True

    def predict(self, features) -> np.ndarray:
        return forward(self.params, features)

    def snapshot(self) -> MlpParams:
        return self.params.copy()


def save_params(params: MlpParams, path, meta: dict | None = None) -> None:
    """Write the text artifact.

    Layout, one item per line::

        AERIALMPC-RESIDUAL 1
        sizes 30 32 32 3
        meta <key>=<value> ...          (optional, single line)
        x_mean <30 floats>
        x_scale <30 floats>
        W0 <row-major floats>
        b0 <floats>
        ... one W/b pair per layer
    """
    def row(values):
        return " ".join(repr(float(v)) for v in np.ravel(values))

    lines = [f"{ARTIFACT_MAGIC} {ARTIFACT_VERSION}", "sizes " + " ".join(map(str, params.sizes))]
    if meta:
        lines.append("meta " + " ".join(f"{k}={v}" for k, v in sorted(meta.items())))
    lines.append("x_mean " + row(params.x_mean))
    lines.append("x_scale " + row(params.x_scale))
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        lines.append(f"W{i} " + row(w))
        lines.append(f"b{i} " + row(b))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_params(path) -> MlpParams:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    head = lines[0].split()
    if len(head) != 2 or head[0] != ARTIFACT_MAGIC:
        raise ValueError(f"{path}: not a residual model artifact")
    if int(head[1]) != ARTIFACT_VERSION:
        raise ValueError(f"{path}: unsupported artifact version {head[1]}")
    fields = {}
    for line in lines[1:]:
        key, _, rest = line.partition(" ")
        fields[key] = rest
    sizes = [int(s) for s in fields["sizes"].split()]

    def vec(key):
        return np.array([float(v) for v in fields[key].split()])

    weights, biases = [], []
    for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        weights.append(vec(f"W{i}").reshape(n_out, n_in))
        biases.append(vec(f"b{i}"))
    return MlpParams(weights, biases, vec("x_mean"), vec("x_scale"))
