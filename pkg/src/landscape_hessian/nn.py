"""Fully connected ReLU classifier with softmax cross-entropy loss.

Layer ``p`` computes ``z_p = W_p x_p + b_p`` and feeds ``x_{p+1} = D_p z_p``
to the next layer, where ``D_p`` is the 0/1 mask ``[z_p >= 0]``. The last
layer's output is the logit vector. Parameters flatten to a single vector
``theta`` layer by layer: row-major ``W_p`` followed by ``b_p`` (biases are
left out entirely when the model is bias-free).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class MlpConfig:
    input_dim: int
    hidden_dim: int
    num_layers: int
    num_classes: int
    bias: bool = True

    def __post_init__(self):
        if self.input_dim < 1 or self.hidden_dim < 1:
            raise ValueError("input_dim and hidden_dim must be >= 1")
        if self.num_layers < 1:
            raise ValueError("num_layers must be >= 1")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        """``(fan_out, fan_in)`` of every layer, input to output."""
        dims = [self.input_dim] + [self.hidden_dim] * (self.num_layers - 1) + [self.num_classes]
        return [(dims[p + 1], dims[p]) for p in range(self.num_layers)]

    @property
    def num_params(self) -> int:
        return sum(o * i + (o if self.bias else 0) for o, i in self.layer_shapes)


@dataclass
class MlpParams:
    config: MlpConfig
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        shapes = self.config.layer_shapes
        if len(self.weights) != len(shapes) or len(self.biases) != len(shapes):
            raise ValueError("number of weight/bias arrays does not match num_layers")
        for p, (w, b, (o, i)) in enumerate(zip(self.weights, self.biases, shapes)):
            if w.shape != (o, i) or b.shape != (o,):
                raise ValueError(f"layer {p + 1}: got W{w.shape}, b{b.shape}, expected ({o}, {i})")
            if not self.config.bias and np.any(b):
                raise ValueError("bias-free model must have all-zero biases")

    @property
    def num_layers(self) -> int:
        return self.config.num_layers

    def flatten(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            if self.config.bias:
                parts.append(b)
        return np.concatenate(parts)

    @classmethod
    def from_flat(cls, config: MlpConfig, theta) -> "MlpParams":
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (config.num_params,):
            raise ValueError(f"theta has shape {theta.shape}, expected ({config.num_params},)")
        weights, biases, pos = [], [], 0
        for o, i in config.layer_shapes:
            weights.append(theta[pos:pos + o * i].reshape(o, i).copy())
            pos += o * i
            if config.bias:
                biases.append(theta[pos:pos + o].copy())
                pos += o
            else:
                biases.append(np.zeros(o))
        return cls(config, weights, biases)

    def copy(self) -> "MlpParams":
        return MlpParams(self.config, [w.copy() for w in self.weights], [b.copy() for b in self.biases])


@dataclass
class ForwardTrace:
    """Cached quantities of one forward pass.

    ``masks[p]`` is the diagonal of ``D_p`` for the hidden layers only, so it
    has ``num_layers - 1`` entries.
    """

    layer_inputs: list[np.ndarray]
    pre_activations: list[np.ndarray]
    masks: list[np.ndarray]
    logits: np.ndarray
    probs: np.ndarray
    loss: float
    label: int = field(default=-1)


def init_params(config: MlpConfig, seed: int) -> MlpParams:
    """Uniform fan-based (Glorot) init; biases start at zero."""
    rng = np.random.default_rng(seed)
    weights = []
    for o, i in config.layer_shapes:
        s = math.sqrt(6.0 / (i + o))
        weights.append(rng.uniform(-s, s, size=(o, i)))
    biases = [np.zeros(o) for o, _ in config.layer_shapes]
    return MlpParams(config, weights, biases)


def one_hot_index(y, num_classes: int) -> int:
    """Index of the hot entry; rejects anything that is not exactly one-hot."""
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (num_classes,):
        raise ValueError(f"target has shape {y.shape}, expected ({num_classes},)")
    hot = np.flatnonzero(y)
    if hot.size != 1 or y[hot[0]] != 1.0:
        raise ValueError("target must be a one-hot vector")
    return int(hot[0])


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - np.max(z, axis=-1, keepdims=True))
    return e / np.sum(e, axis=-1, keepdims=True)


def log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - np.max(z, axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def _check_input(params: MlpParams, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (params.config.input_dim,):
        raise ValueError(f"input has shape {x.shape}, expected ({params.config.input_dim},)")
    return x


def forward(params: MlpParams, x, y) -> ForwardTrace:
    x = _check_input(params, x)
    c = one_hot_index(y, params.config.num_classes)
    inputs, pres, masks = [], [], []
    h = x
    for p, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(h)
        z = w @ h + b
        pres.append(z)
        if p < params.num_layers - 1:
            mask = (z >= 0).astype(np.float64)
            masks.append(mask)
            h = mask * z
    logits = pres[-1]
    logp = log_softmax(logits)
    return ForwardTrace(inputs, pres, masks, logits, softmax(logits), float(-logp[c]), c)


def grad(params: MlpParams, x, y) -> np.ndarray:
    """Gradient of the per-object loss with respect to the flat parameters."""
    trace = forward(params, x, y)
    delta = trace.probs.copy()
    delta[trace.label] -= 1.0
    parts = []
    for p in reversed(range(params.num_layers)):
        block = [np.outer(delta, trace.layer_inputs[p]).ravel()]
        if params.config.bias:
            block.append(delta.copy())
        parts.append(block)
        if p > 0:
            delta = (params.weights[p].T @ delta) * trace.masks[p - 1]
    return np.concatenate([a for block in reversed(parts) for a in block])


# Batched paths: rows of ``X`` are objects. Used by training and by every
# experiment that needs losses for thousands of objects.


def forward_batch(params: MlpParams, X: np.ndarray):
    """Logits for a batch plus the per-layer inputs and masks needed by backprop."""
    inputs, masks = [], []
    h = X
    for p, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(h)
        z = h @ w.T + b
        if p < params.num_layers - 1:
            mask = z >= 0
            masks.append(mask)
            h = np.where(mask, z, 0.0)
        else:
            h = z
    return h, inputs, masks


def per_object_losses(params: MlpParams, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    logits, _, _ = forward_batch(params, X)
    hot = np.argmax(Y, axis=1)[:, None]
    return -np.take_along_axis(log_softmax(logits), hot, axis=1)[:, 0]


def loss_and_grad_batch(params: MlpParams, X: np.ndarray, Y: np.ndarray):
    """Mean loss over the batch and its gradient as per-layer ``(dW, db)`` lists."""
    logits, inputs, masks = forward_batch(params, X)
    logp = log_softmax(logits)
    hot = np.argmax(Y, axis=1)[:, None]
    loss = float(-np.sum(np.take_along_axis(logp, hot, axis=1)) / X.shape[0])
    delta = (np.exp(logp) - Y) / X.shape[0]
    dws, dbs = [None] * params.num_layers, [None] * params.num_layers
    for p in reversed(range(params.num_layers)):
        dws[p] = delta.T @ inputs[p]
        dbs[p] = delta.sum(axis=0) if params.config.bias else np.zeros(delta.shape[1])
        if p > 0:
            delta = np.where(masks[p - 1], delta @ params.weights[p], 0.0)
    return loss, dws, dbs


def flat_grad_batch(params: MlpParams, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    _, dws, dbs = loss_and_grad_batch(params, X, Y)
    parts = []
    for dw, db in zip(dws, dbs):
        parts.append(dw.ravel())
        if params.config.bias:
            parts.append(db)
    return np.concatenate(parts)


def mean_loss(params: MlpParams, dataset, k: int) -> float:
    """Mean per-object loss over the first ``k`` objects of ``dataset``."""
    if not 1 <= k <= dataset.m:
        raise ValueError(f"k={k} out of range [1, {dataset.m}]")
    losses = per_object_losses(params, dataset.features[:k], dataset.labels[:k])
    return math.fsum(losses) / k
