"""Masked backpropagation and Adam training for MLP classifiers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DivergenceError
from .net import NetworkSpec, cross_entropy, log_softmax, param_layout

DEFAULT_GD_HP = {"lrate": 3e-4, "batch_size": 128, "b1": 0.9, "b2": 0.999, "eps": 1e-8}


@dataclass(frozen=True)
class TrainRecord:
    final_params: np.ndarray
    loss_history: np.ndarray
    steps: int


def gd_hp(overrides: dict | None = None) -> dict:
    hp = dict(DEFAULT_GD_HP)
    for k, v in (overrides or {}).items():
        if k not in hp:
            raise ConfigError(f"unknown GD hyperparameter {k!r}")
        hp[k] = v
    return hp


def loss_and_grad(spec: NetworkSpec, params: np.ndarray, mask, x: np.ndarray, y: np.ndarray):
    """Mean cross-entropy and its gradient with respect to ``params``.

    The forward pass uses ``params * mask``; the returned gradient is
    zero on masked-out coordinates.
    """
    if spec.kind != "mlp":
        raise ConfigError("backprop is only implemented for MLPs")
    if x.shape[0] == 0:
        raise ConfigError("empty batch")
    layout = param_layout(spec)
    m = np.ones(layout.size) if mask is None else np.asarray(mask, dtype=np.float64)
    tensors = layout.unpack(np.asarray(params, dtype=np.float64) * m)
    weights, biases = tensors[0::2], tensors[1::2]

    acts = [x]
    pre = []
    h = x
    for k, (w, b) in enumerate(zip(weights, biases)):
        z = h @ w + b
        pre.append(z)
        if k < len(weights) - 1:
            h = np.tanh(z) if spec.activation == "tanh" else np.maximum(z, 0.0)
            acts.append(h)
    out = pre[-1]
    logits = np.tanh(out) if spec.output_transform == "tanh" else out
    loss = float(cross_entropy(logits, y))

    batch = x.shape[0]
    probs = np.exp(log_softmax(logits))
    probs[np.arange(batch), y] -= 1.0
    dz = probs / batch
    if spec.output_transform == "tanh":
        dz = dz * (1.0 - logits ** 2)

    grads = [None] * (2 * len(weights))
    for k in range(len(weights) - 1, -1, -1):
        grads[2 * k] = acts[k].T @ dz
        grads[2 * k + 1] = dz.sum(axis=0)
        if k > 0:
            dh = dz @ weights[k].T
            if spec.activation == "tanh":
                dz = dh * (1.0 - acts[k] ** 2)
            else:
                dz = dh * (pre[k - 1] > 0)
    flat = np.concatenate([g.ravel() for g in grads])
    return loss, flat * m


def masked_grad(spec: NetworkSpec, params, mask, batch) -> np.ndarray:
    x, y = batch
    return loss_and_grad(spec, params, mask, np.asarray(x, dtype=np.float64), np.asarray(y))[1]


def gd_train(spec: NetworkSpec, init, mask, task, steps: int, hp: dict | None = None,
             rng: np.random.Generator | None = None) -> TrainRecord:
    """Adam on mean cross-entropy over shuffled minibatches of the task's training set.

    ``rng`` drives only the batch order; pass a dedicated stream so data
    order can vary independently of the initialisation.
    """
    hp = gd_hp(hp)
    if steps < 0:
        raise ConfigError("steps must be non-negative")
    if not hasattr(task, "train_data"):
        raise ConfigError(f"GD training needs a classification task, got {task.kind!r}")
    rng = rng if rng is not None else np.random.default_rng(0)
    x, y = task.train_data(spec)
    m = np.asarray(mask, dtype=np.float64)
    params = np.asarray(init, dtype=np.float64) * m
    adam_m = np.zeros_like(params)
    adam_v = np.zeros_like(params)
    b1, b2, eps, lr = hp["b1"], hp["b2"], hp["eps"], hp["lrate"]
    bs = min(int(hp["batch_size"]), len(y))
    history = np.empty(steps)
    order = np.empty(0, dtype=np.int64)
    pos = 0
    for step in range(steps):
        if pos + bs > order.size:
            order, pos = rng.permutation(len(y)), 0
        idx = order[pos:pos + bs]
        pos += bs
        loss, g = loss_and_grad(spec, params, m, x[idx], y[idx])
        if not np.isfinite(loss):
            raise DivergenceError(step)
        history[step] = loss
        t = step + 1
        adam_m = b1 * adam_m + (1 - b1) * g
        adam_v = b2 * adam_v + (1 - b2) * g * g
        params = params - lr * (adam_m / (1 - b1 ** t)) / (np.sqrt(adam_v / (1 - b2 ** t)) + eps)
        params = params * m
    return TrainRecord(final_params=params, loss_history=history, steps=steps)
