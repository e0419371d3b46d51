"""Mini-batch Adam training of the ReLU classifier."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .data import Dataset


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int, batch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch}, batch {batch} (loss={loss!r})")
        self.epoch = epoch
        self.batch = batch


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 64
    epochs: int = 10
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


@dataclass
class TrainReport:
    initial_loss: float
    final_loss: float
    final_accuracy: float
    gradient_norm: float
    epoch_losses: list[float] = field(default_factory=list)
    epoch_accuracies: list[float] = field(default_factory=list)


class Adam:
    """Adam with bias-corrected moments over a list of parameter arrays."""

    def __init__(self, shapes, lr: float, beta1: float, beta2: float, eps: float):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.t = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for x, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            x -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def accuracy(params: nn.MlpParams, dataset: Dataset) -> float:
    """Fraction of objects whose argmax logit (lowest index on ties) is the true class."""
    logits, _, _ = nn.forward_batch(params, dataset.features)
    return float(np.mean(np.argmax(logits, axis=1) == dataset.label_indices))


def full_loss(params: nn.MlpParams, dataset: Dataset) -> float:
    return math.fsum(nn.per_object_losses(params, dataset.features, dataset.labels)) / dataset.m


def train(model_config: nn.MlpConfig, train_config: TrainConfig, dataset: Dataset, params: nn.MlpParams | None = None):
    """Train on the whole dataset and return ``(params, report)``.

    The data are reshuffled every epoch from a generator seeded with
    ``train_config.seed``; the trailing partial batch is kept. Initial
    weights come from the same seed unless ``params`` is given.
    """
    if dataset.n != model_config.input_dim or dataset.K != model_config.num_classes:
        raise ValueError(
            f"dataset is {dataset.n}->{dataset.K} but the model is "
            f"{model_config.input_dim}->{model_config.num_classes}"
        )
    params = nn.init_params(model_config, train_config.seed) if params is None else params.copy()
    rng = np.random.default_rng([train_config.seed, 1])

    tensors = list(params.weights)
    if model_config.bias:
        tensors += params.biases
    opt = Adam([t.shape for t in tensors], train_config.learning_rate, train_config.beta1,
               train_config.beta2, train_config.eps_adam)

    report = TrainReport(full_loss(params, dataset), math.nan, math.nan, math.nan)
    bs = train_config.batch_size
    for epoch in range(train_config.epochs):
        order = rng.permutation(dataset.m)
        for b, start in enumerate(range(0, dataset.m, bs)):
            idx = order[start:start + bs]
            loss, dws, dbs = nn.loss_and_grad_batch(params, dataset.features[idx], dataset.labels[idx])
            if not math.isfinite(loss):
                raise TrainingDivergedError(epoch + 1, b + 1, loss)
            opt.step(tensors, dws + (dbs if model_config.bias else []))
        epoch_loss = full_loss(params, dataset)
        if not math.isfinite(epoch_loss):
            raise TrainingDivergedError(epoch + 1, -1, epoch_loss)
        report.epoch_losses.append(epoch_loss)
        report.epoch_accuracies.append(accuracy(params, dataset))

    report.final_loss = report.epoch_losses[-1]
    report.final_accuracy = report.epoch_accuracies[-1]
    report.gradient_norm = float(np.linalg.norm(nn.flat_grad_batch(params, dataset.features, dataset.labels)))
    return params, report
