"""Trainable binary activity classifiers over step-count windows.

A shared ("one-size-fits-all") recurrent network maps a window of hourly
counts (length 48, or 56 with protected-attribute indicators appended) to
the probability of a HighActivity next day. Everything is implemented in
numpy with explicit backpropagation so gradients can be verified against
finite differences. Group personalization freezes the recurrent layers and
re-optimizes only the final affine layer per group.

Training is deterministic given (config, seed, data): all randomness flows
from one seeded generator, and the returned parameters are the epoch-end
snapshot with the lowest full-batch training loss (evaluated with dropout
off), so the final training loss never exceeds the initial one.
"""

from __future__ import annotations

import copy
import json
import warnings
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .datasets import GroupPartition

SIGMOID_CLIP = 60.0  # |logit| beyond this saturates to 0/1 anyway
CHECKPOINT_FORMAT = 1


@dataclass(frozen=True)
class ModelConfig:
    input_length: int = 48
    hidden_size: int = 32
    recurrent_layers: int = 3
    cell: str = "lstm"  # "lstm" | "elman"
    dropout_rate: float = 0.2
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 50
    finetune_epochs: int = 50
    finetune_learning_rate: float = 1e-2
    seed: int = 0

    def __post_init__(self):
        if self.input_length < 1:
            raise ValueError(f"input_length must be positive, got {self.input_length}")
        if self.cell not in ("lstm", "elman"):
            raise ValueError(f"cell must be 'lstm' or 'elman', got {self.cell!r}")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must be in [0, 1)")


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.clip(x, -SIGMOID_CLIP, SIGMOID_CLIP)))


def bce_loss(probs: np.ndarray, y: np.ndarray) -> float:
    """Mean binary cross entropy with clipped probabilities."""
    p = np.clip(probs, 1e-12, 1 - 1e-12)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))


def _init_layer(rng, d_in: int, hidden: int, cell: str) -> dict:
    gates = 4 * hidden if cell == "lstm" else hidden
    scale_w = 1.0 / np.sqrt(d_in)
    scale_u = 1.0 / np.sqrt(hidden)
    return {
        "W": rng.normal(0.0, scale_w, size=(d_in, gates)),
        "U": rng.normal(0.0, scale_u, size=(hidden, gates)),
        "b": np.zeros(gates),
    }


def init_parameters(config: ModelConfig, rng) -> dict:
    layers = []
    d_in = 1
    for _ in range(config.recurrent_layers):
        layers.append(_init_layer(rng, d_in, config.hidden_size, config.cell))
        d_in = config.hidden_size
    return {
        "layers": layers,
        "out_w": rng.normal(0.0, 1.0 / np.sqrt(config.hidden_size), size=config.hidden_size),
        "out_b": 0.0,
    }


def _lstm_forward(layer, xs):
    """xs: (T, N, D) -> hs: (T, N, H), plus backprop cache."""
    T, N, _ = xs.shape
    H = layer["U"].shape[0]
    h = np.zeros((N, H))
    c = np.zeros((N, H))
    hs = np.empty((T, N, H))
    cache = []
    for t in range(T):
        z = xs[t] @ layer["W"] + h @ layer["U"] + layer["b"]
        i = _sigmoid(z[:, :H])
        f = _sigmoid(z[:, H : 2 * H])
        g = np.tanh(z[:, 2 * H : 3 * H])
        o = _sigmoid(z[:, 3 * H :])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        cache.append((xs[t], h, c, i, f, g, o, tc))
        h, c = h_new, c_new
        hs[t] = h
    return hs, cache


def _lstm_backward(layer, cache, dhs):
    T = len(cache)
    H = layer["U"].shape[0]
    dW = np.zeros_like(layer["W"])
    dU = np.zeros_like(layer["U"])
    db = np.zeros_like(layer["b"])
    dxs = np.empty((T,) + cache[0][0].shape)
    dh_next = np.zeros((dhs.shape[1], H))
    dc_next = np.zeros((dhs.shape[1], H))
    for t in reversed(range(T)):
        x_t, h_prev, c_prev, i, f, g, o, tc = cache[t]
        dh = dhs[t] + dh_next
        do = dh * tc
        dc = dc_next + dh * o * (1 - tc * tc)
        di = dc * g
        df = dc * c_prev
        dg = dc * i
        dz = np.concatenate(
            [
                di * i * (1 - i),
                df * f * (1 - f),
                dg * (1 - g * g),
                do * o * (1 - o),
            ],
            axis=1,
        )
        dW += x_t.T @ dz
        dU += h_prev.T @ dz
        db += dz.sum(axis=0)
        dxs[t] = dz @ layer["W"].T
        dh_next = dz @ layer["U"].T
        dc_next = dc * f
    return dxs, {"W": dW, "U": dU, "b": db}


def _elman_forward(layer, xs):
    T, N, _ = xs.shape
    H = layer["U"].shape[0]
    h = np.zeros((N, H))
    hs = np.empty((T, N, H))
    cache = []
    for t in range(T):
        h_new = np.tanh(xs[t] @ layer["W"] + h @ layer["U"] + layer["b"])
        cache.append((xs[t], h, h_new))
        h = h_new
        hs[t] = h
    return hs, cache


def _elman_backward(layer, cache, dhs):
    T = len(cache)
    H = layer["U"].shape[0]
    dW = np.zeros_like(layer["W"])
    dU = np.zeros_like(layer["U"])
    db = np.zeros_like(layer["b"])
    dxs = np.empty((T,) + cache[0][0].shape)
    dh_next = np.zeros((dhs.shape[1], H))
    for t in reversed(range(T)):
        x_t, h_prev, h_new = cache[t]
        dh = dhs[t] + dh_next
        dz = dh * (1 - h_new * h_new)
        dW += x_t.T @ dz
        dU += h_prev.T @ dz
        db += dz.sum(axis=0)
        dxs[t] = dz @ layer["W"].T
        dh_next = dz @ layer["U"].T
    return dxs, {"W": dW, "U": dU, "b": db}


_FORWARD = {"lstm": _lstm_forward, "elman": _elman_forward}
_BACKWARD = {"lstm": _lstm_backward, "elman": _elman_backward}


def _forward(params, config, x_std, dropout_masks=None):
    """x_std: standardized (N, T) -> (probs, caches)."""
    xs = x_std.T[:, :, None]  # (T, N, 1)
    caches = []
    for l, layer in enumerate(params["layers"]):
        hs, cache = _FORWARD[config.cell](layer, xs)
        mask = None
        if dropout_masks is not None:
            mask = dropout_masks[l]
            hs = hs * mask
        caches.append((cache, mask))
        xs = hs
    h_last = xs[-1]  # (N, H)
    logits = h_last @ params["out_w"] + params["out_b"]
    probs = _sigmoid(logits)
    return probs, (caches, h_last)


def predict_proba_with_params(params, config, scaler, X) -> np.ndarray:
    """Deterministic inference (dropout disabled)."""
    x_std = (np.asarray(X, dtype=float) - scaler[0]) / scaler[1]
    probs, _ = _forward(params, config, x_std)
    return probs


def loss_and_grads(params, config, x_std, y, dropout_masks=None):
    probs, (caches, h_last) = _forward(params, config, x_std, dropout_masks)
    loss = bce_loss(probs, y)
    n = len(y)
    dlogits = (probs - y) / n
    grads = {
        "out_w": h_last.T @ dlogits,
        "out_b": float(dlogits.sum()),
        "layers": [None] * len(params["layers"]),
    }
    T = x_std.shape[1]
    dhs = np.zeros((T, n, config.hidden_size))
    dhs[-1] = dlogits[:, None] * params["out_w"]
    for l in reversed(range(len(params["layers"]))):
        cache, mask = caches[l]
        if mask is not None:
            dhs = dhs * mask
        dxs, layer_grads = _BACKWARD[config.cell](params["layers"][l], cache, dhs)
        grads["layers"][l] = layer_grads
        dhs = dxs
    return loss, grads


def _param_items(params):
    for l, layer in enumerate(params["layers"]):
        for key in ("W", "U", "b"):
            yield (("layers", l, key), layer[key])
    yield (("out_w",), params["out_w"])
    yield (("out_b",), params["out_b"])


def _grad_for(grads, path):
    if path[0] == "layers":
        return grads["layers"][path[1]][path[2]]
    return grads[path[0]]


class _Adam:
    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m, self.v = {}, {}
        self.t = 0

    def step(self, params_items, grads):
        self.t += 1
        updated = {}
        for path, value in params_items:
            g = np.asarray(_grad_for(grads, path), dtype=float)
            m = self.m.get(path, np.zeros_like(g))
            v = self.v.get(path, np.zeros_like(g))
            m = self.beta1 * m + (1 - self.beta1) * g
            v = self.beta2 * v + (1 - self.beta2) * g * g
            self.m[path], self.v[path] = m, v
            m_hat = m / (1 - self.beta1**self.t)
            v_hat = v / (1 - self.beta2**self.t)
            updated[path] = value - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return updated


def _apply_updates(params, updated):
    for path, value in updated.items():
        if path[0] == "layers":
            params["layers"][path[1]][path[2]] = value
        elif path[0] == "out_b":
            params["out_b"] = float(value)
        else:
            params[path[0]] = value


def fit_scaler(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-feature mean/std from training data; constant features get std 1."""
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std = np.where(std < 1e-12, 1.0, std)
    return mean, std


@dataclass
class SharedModel:
    """A trained shared classifier: parameters, scaler and config echo."""

    config: ModelConfig
    params: dict
    scaler: tuple
    train_loss: float
    #: full-batch loss at the random initialization; train_loss never exceeds it
    initial_loss: float = float("inf")

    def predict_proba(self, X) -> np.ndarray:
        return predict_proba_with_params(self.params, self.config, self.scaler, X)

    def predict_label(self, X) -> np.ndarray:
        return self.predict_proba(X) >= 0.5

    def hidden_features(self, X) -> np.ndarray:
        """Last hidden state of the top recurrent layer (the frozen part)."""
        x_std = (np.asarray(X, dtype=float) - self.scaler[0]) / self.scaler[1]
        _, (_, h_last) = _forward(self.params, self.config, x_std)
        return h_last


def train_shared(X, y, config: ModelConfig) -> SharedModel:
    """Train the shared model by minimizing mean BCE with Adam.

    Returns the epoch snapshot with the lowest full-batch loss, so the
    reported training loss is never above the initial loss.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[1] != config.input_length:
        raise ValueError(
            f"expected windows of length {config.input_length}, got shape {X.shape}"
        )
    if len(np.unique(y)) < 2:
        warnings.warn(
            "single-class training set: the model degenerates to the class prior",
            stacklevel=2,
        )
    rng = np.random.default_rng(config.seed)
    scaler = fit_scaler(X)
    x_std = (X - scaler[0]) / scaler[1]
    params = init_parameters(config, rng)
    opt = _Adam(config.learning_rate)

    def full_loss(p):
        probs, _ = _forward(p, config, x_std)
        return bce_loss(probs, y)

    initial_loss = full_loss(params)
    best_loss = initial_loss
    best_params = copy.deepcopy(params)
    n = len(y)
    T = x_std.shape[1]
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            masks = None
            if config.dropout_rate > 0:
                keep = 1 - config.dropout_rate
                masks = [
                    (
                        rng.random((T, len(idx), config.hidden_size)) < keep
                    ).astype(float)
                    / keep
                    for _ in range(config.recurrent_layers)
                ]
            loss, grads = loss_and_grads(params, config, x_std[idx], y[idx], masks)
            if not np.isfinite(loss):
                raise RuntimeError(
                    "training loss is not finite; lower the learning rate"
                )
            _apply_updates(params, opt.step(_param_items(params), grads))
        epoch_loss = full_loss(params)
        if not np.isfinite(epoch_loss):
            raise RuntimeError("training loss is not finite; lower the learning rate")
        if epoch_loss < best_loss:
            best_loss = epoch_loss
            best_params = copy.deepcopy(params)
    return SharedModel(
        config=config,
        params=best_params,
        scaler=scaler,
        train_loss=best_loss,
        initial_loss=initial_loss,
    )


@dataclass
class PersonalizedModel:
    """Shared recurrent layers plus one fine-tuned output layer per group."""

    shared: SharedModel
    partition: GroupPartition
    branches: dict  # group index (0/1) -> {"out_w", "out_b"}
    #: groups that kept the shared output layer because they had no data
    fallback_groups: tuple = ()

    def _branch(self, group: Optional[int]):
        if group is None or group not in self.branches:
            return self.shared.params["out_w"], self.shared.params["out_b"]
        br = self.branches[group]
        return br["out_w"], br["out_b"]

    def predict_proba(self, X, user_ids) -> np.ndarray:
        """Route each window through its user's group branch.

        Users outside the partition (Missing membership) fall back to the
        shared output layer.
        """
        h = self.shared.hidden_features(X)
        probs = np.empty(len(h))
        groups = [self.partition.group_of(u) for u in user_ids]
        for g in set(groups):
            w, b = self._branch(g)
            mask = np.array([gi == g for gi in groups])
            probs[mask] = _sigmoid(h[mask] @ w + b)
        return probs

    def predict_label(self, X, user_ids) -> np.ndarray:
        return self.predict_proba(X, user_ids) >= 0.5

    def missing_membership(self, user_ids) -> list:
        return sorted({u for u in user_ids if self.partition.group_of(u) is None})


def _finetune_output_layer(h, y, out_w, out_b, epochs, lr, batch_size, rng):
    """Re-optimize (out_w, out_b) on cached hidden features.

    Keeps the iterate with the lowest full-batch loss, starting from the
    shared layer itself, so the fine-tuned loss never exceeds the shared
    one and 0 epochs reproduces the shared layer exactly.
    """
    w = out_w.copy()
    b = float(out_b)
    n = len(y)

    def full_loss(w_, b_):
        return bce_loss(_sigmoid(h @ w_ + b_), y)

    best = (full_loss(w, b), w.copy(), b)
    opt = _Adam(lr)
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            probs = _sigmoid(h[idx] @ w + b)
            dlogits = (probs - y[idx]) / len(idx)
            grads = {"out_w": h[idx].T @ dlogits, "out_b": float(dlogits.sum())}
            updated = opt.step([(("out_w",), w), (("out_b",), b)], grads)
            w = updated[("out_w",)]
            b = float(updated[("out_b",)])
        loss = full_loss(w, b)
        if loss < best[0]:
            best = (loss, w.copy(), b)
    return {"out_w": best[1], "out_b": best[2], "train_loss": best[0]}


def personalize(
    shared: SharedModel,
    part: GroupPartition,
    X,
    y,
    user_ids,
    epochs: Optional[int] = None,
    learning_rate: Optional[float] = None,
) -> PersonalizedModel:
    """Freeze the recurrent layers and fine-tune the output layer per group.

    The frozen layers are shared by reference (and never mutated); each
    branch starts from the shared output layer. A group with no training
    windows keeps the shared layer and is flagged in ``fallback_groups``.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    epochs = shared.config.finetune_epochs if epochs is None else epochs
    lr = shared.config.finetune_learning_rate if learning_rate is None else learning_rate
    h = shared.hidden_features(X)
    groups = np.array([part.group_of(u) for u in user_ids], dtype=object)
    branches = {}
    fallback = []
    for g in (0, 1):
        mask = groups == g
        if not mask.any():
            fallback.append(g)
            continue
        rng = np.random.default_rng((shared.config.seed, g))
        branches[g] = _finetune_output_layer(
            h[mask],
            y[mask],
            shared.params["out_w"],
            shared.params["out_b"],
            epochs,
            lr,
            shared.config.batch_size,
            rng,
        )
    return PersonalizedModel(
        shared=shared,
        partition=part,
        branches=branches,
        fallback_groups=tuple(fallback),
    )


def gradient_check(model: SharedModel, X, y, eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    Dropout is disabled. The relative error per parameter entry is
    |analytic - fd| / max(|analytic|, |fd|, 1e-8).
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    x_std = (X - model.scaler[0]) / model.scaler[1]
    params = copy.deepcopy(model.params)
    _, grads = loss_and_grads(params, model.config, x_std, y)

    def loss_at(p):
        probs, _ = _forward(p, model.config, x_std)
        return bce_loss(probs, y)

    max_err = 0.0
    for path, value in _param_items(params):
        analytic = np.atleast_1d(np.asarray(_grad_for(grads, path), dtype=float))
        arr = np.atleast_1d(np.asarray(value, dtype=float))
        flat_fd = np.empty(arr.size)
        for k in range(arr.size):
            orig = arr.flat[k]
            arr.flat[k] = orig + eps
            _write_param(params, path, arr)
            up = loss_at(params)
            arr.flat[k] = orig - eps
            _write_param(params, path, arr)
            down = loss_at(params)
            arr.flat[k] = orig
            _write_param(params, path, arr)
            flat_fd[k] = (up - down) / (2 * eps)
        denom = np.maximum(np.maximum(np.abs(analytic.ravel()), np.abs(flat_fd)), 1e-8)
        max_err = max(max_err, float(np.max(np.abs(analytic.ravel() - flat_fd) / denom)))
    return max_err


def _write_param(params, path, arr):
    if path[0] == "layers":
        params["layers"][path[1]][path[2]] = arr.reshape(
            params["layers"][path[1]][path[2]].shape
        )
    elif path[0] == "out_b":
        params["out_b"] = float(arr[0])
    else:
        params[path[0]] = arr.reshape(params[path[0]].shape)


def save_checkpoint(model: SharedModel, path) -> None:
    """Write a JSON checkpoint that round-trips predictions exactly."""
    payload = {
        "format": CHECKPOINT_FORMAT,
        "config": asdict(model.config),
        "train_loss": model.train_loss,
        "initial_loss": model.initial_loss,
        "scaler_mean": model.scaler[0].tolist(),
        "scaler_std": model.scaler[1].tolist(),
        "layers": [
            {k: layer[k].tolist() for k in ("W", "U", "b")}
            for layer in model.params["layers"]
        ],
        "out_w": model.params["out_w"].tolist(),
        "out_b": model.params["out_b"],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_checkpoint(path) -> SharedModel:
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"unsupported checkpoint format {payload.get('format')!r}")
    config = ModelConfig(**payload["config"])
    params = {
        "layers": [
            {k: np.array(layer[k], dtype=float) for k in ("W", "U", "b")}
            for layer in payload["layers"]
        ],
        "out_w": np.array(payload["out_w"], dtype=float),
        "out_b": float(payload["out_b"]),
    }
    scaler = (
        np.array(payload["scaler_mean"], dtype=float),
        np.array(payload["scaler_std"], dtype=float),
    )
    return SharedModel(
        config=config,
        params=params,
        scaler=scaler,
        train_loss=payload["train_loss"],
        initial_loss=payload.get("initial_loss", float("inf")),
    )
