"""Loss differences between nested sample sizes at a fixed parameter point.

For losses ``l_1..l_m`` the prefix means are ``L_k = (l_1 + ... + l_k) / k``
and adding one object changes the mean by

    L_{k+1} - L_k = (l_{k+1} - L_k) / (k + 1).

The ledger stores both sides of that identity; the averaged curve repeats
it over random orderings of the data.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import hessian, nn
from .data import Dataset

LOG_FLOOR = 1e-300


class FlooredValuesWarning(UserWarning):
    """Zero curve values were floored before taking logarithms."""


def prefix_means(values) -> np.ndarray:
    """Running means with Neumaier-compensated summation.

    Deviations from the first value are summed, so equal values give means
    that are exactly that value.
    """
    values = np.asarray(values, dtype=np.float64)
    out = np.empty(values.size)
    if values.size == 0:
        return out
    shift = float(values[0])
    total = 0.0
    comp = 0.0
    for i, v in enumerate((values - shift).tolist()):
        t = total + v
        if abs(total) >= abs(v):
            comp += (total - t) + v
        else:
            comp += (v - t) + total
        total = t
        out[i] = shift + (total + comp) / (i + 1)
    return out


@dataclass
class LossLedger:
    """Per-object losses in dataset order with their prefix means.

    Arrays are 0-based: ``prefix_means[k - 1]`` is ``L_k`` and ``diffs[k - 1]``
    is ``|L_{k+1} - L_k|``.
    """

    losses: np.ndarray
    prefix_means: np.ndarray
    diffs: np.ndarray

    @classmethod
    def from_losses(cls, losses) -> "LossLedger":
        losses = np.asarray(losses, dtype=np.float64)
        means = prefix_means(losses)
        k = np.arange(1, losses.size)
        diffs = np.abs(losses[1:] - means[:-1]) / (k + 1)
        return cls(losses, means, diffs)

    @property
    def m(self) -> int:
        return self.losses.size

    def identity_residual(self) -> float:
        """Largest violation of ``(k+1)(L_{k+1} - L_k) = l_{k+1} - L_k`` over all k."""
        if self.m < 2:
            return 0.0
        k = np.arange(1, self.m)
        lhs = (k + 1) * (self.prefix_means[1:] - self.prefix_means[:-1])
        rhs = self.losses[1:] - self.prefix_means[:-1]
        return float(np.max(np.abs(lhs - rhs)))


def build_ledger(params_hat: nn.MlpParams, dataset: Dataset) -> LossLedger:
    return LossLedger.from_losses(nn.per_object_losses(params_hat, dataset.features, dataset.labels))


def lemma2_bound(k, constants: hessian.BoundConstants, radius: float):
    """``2 / (k+1) * (M_loss + M_H R^2)``; ``k`` may be an array."""
    if radius < 0:
        raise ValueError("radius must be non-negative")
    k_arr = np.asarray(k)
    if np.any(k_arr < 1):
        raise ValueError("k must be >= 1")
    value = 2.0 / (k_arr + 1.0) * (constants.m_loss + constants.m_h * radius * radius)
    return float(value) if np.ndim(value) == 0 else value


def ema(values, alpha: float) -> np.ndarray:
    if not 0.0 <= alpha < 1.0:
        raise ValueError("alpha must lie in [0, 1)")
    values = np.asarray(values, dtype=np.float64)
    out = np.empty_like(values)
    acc = values[0] if values.size else 0.0
    for t, v in enumerate(values.tolist()):
        acc = v if t == 0 else alpha * acc + (1.0 - alpha) * v
        out[t] = acc
    return out


def permuted_ledgers(losses, reps: int, seed: int):
    """Yield one ledger per repetition, each over a fresh uniform permutation.

    Every repetition draws from its own generator spawned from ``seed`` so
    results do not depend on evaluation order.
    """
    losses = np.asarray(losses, dtype=np.float64)
    for child in np.random.SeedSequence(seed).spawn(reps):
        order = np.random.default_rng(child).permutation(losses.size)
        yield LossLedger.from_losses(losses[order])


@dataclass
class ConvergenceCurve:
    k: np.ndarray
    mean_abs_diff: np.ndarray
    ema: np.ndarray
    std_abs_diff: np.ndarray
    num_reps: int
    seed: int
    alpha: float
    max_identity_residual: float = 0.0

    def __len__(self) -> int:
        return self.k.size

    def tail_mean(self, fraction: float = 0.25) -> float:
        start = int(math.floor(len(self) * (1.0 - fraction)))
        return float(np.mean(self.mean_abs_diff[start:]))


def curve_from_losses(losses, reps: int, alpha: float, seed: int, on_ledger=None) -> ConvergenceCurve:
    """Permutation-averaged ``|L_{k+1} - L_k|`` for fixed per-object losses.

    ``on_ledger`` is called with every ledger, letting callers audit each
    repetition without holding them all in memory.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    losses = np.asarray(losses, dtype=np.float64)
    if losses.size < 2:
        raise ValueError("need at least two objects for a loss difference")
    total = np.zeros(losses.size - 1)
    total_sq = np.zeros(losses.size - 1)
    residual = 0.0
    for ledger in permuted_ledgers(losses, reps, seed):
        total += ledger.diffs
        total_sq += ledger.diffs**2
        residual = max(residual, ledger.identity_residual())
        if on_ledger is not None:
            on_ledger(ledger)
    mean = total / reps
    var = np.maximum(total_sq / reps - mean**2, 0.0) * (reps / (reps - 1) if reps > 1 else 0.0)
    return ConvergenceCurve(
        k=np.arange(1, losses.size),
        mean_abs_diff=mean,
        ema=ema(mean, alpha),
        std_abs_diff=np.sqrt(var),
        num_reps=reps,
        seed=seed,
        alpha=alpha,
        max_identity_residual=residual,
    )


def averaged_curve(params_hat: nn.MlpParams, dataset: Dataset, reps: int = 100, alpha: float = 0.99, seed: int = 0, on_ledger=None) -> ConvergenceCurve:
    losses = nn.per_object_losses(params_hat, dataset.features, dataset.labels)
    return curve_from_losses(losses, reps, alpha, seed, on_ledger)


def slope_fit(curve: ConvergenceCurve, k_min: int, k_max: int) -> float:
    """Least-squares slope of ``log mean_abs_diff`` against ``log k`` on ``[k_min, k_max]``.

    Uses the unsmoothed averages. Zeros are floored at 1e-300 and reported
    with a :class:`FlooredValuesWarning`.
    """
    if not 1 <= k_min < k_max <= len(curve):
        raise ValueError(f"need 1 <= k_min < k_max <= {len(curve)}, got [{k_min}, {k_max}]")
    sel = (curve.k >= k_min) & (curve.k <= k_max)
    k = curve.k[sel].astype(np.float64)
    y = curve.mean_abs_diff[sel]
    if k.size < 10:
        raise ValueError(f"only {k.size} points in [{k_min}, {k_max}], need at least 10")
    floored = int(np.sum(y <= 0))
    if floored:
        warnings.warn(f"{floored} zero values floored at {LOG_FLOOR}", FlooredValuesWarning, stacklevel=2)
    slope, _ = np.polyfit(np.log(k), np.log(np.maximum(y, LOG_FLOOR)), 1)
    return float(slope)


@dataclass
class TaylorReport:
    radius: float
    probes: int
    k: int
    base_loss: float
    gradient_norm: float
    true_loss: np.ndarray
    model_loss: np.ndarray
    gradient_term: np.ndarray
    seed: int = 0
    errors: np.ndarray = field(init=False)

    def __post_init__(self):
        self.errors = np.abs(self.true_loss - self.model_loss)

    @property
    def max_abs_model_error(self) -> float:
        return float(np.max(self.errors))


def probe_directions(num_params: int, probes: int, seed: int) -> np.ndarray:
    """Unit directions as columns, shape (P, probes)."""
    d = np.random.default_rng(seed).normal(size=(num_params, probes))
    return d / np.linalg.norm(d, axis=0, keepdims=True)


def quadratic_model_check(loss_fn, grad_fn, curvature_fn, theta_star, radius: float, directions: np.ndarray, k: int = 0, seed: int = 0) -> TaylorReport:
    """Compare ``loss_fn`` against its second-order model along each direction.

    ``curvature_fn`` maps a (P, probes) block of vectors to the curvature
    matrix applied to them.
    """
    theta_star = np.asarray(theta_star, dtype=np.float64)
    base = loss_fn(theta_star)
    g = grad_fn(theta_star)
    steps = radius * directions
    hd = curvature_fn(steps)
    grad_term = g @ steps
    quad = 0.5 * np.sum(steps * hd, axis=0)
    model = base + grad_term + quad
    true = np.array([loss_fn(theta_star + steps[:, j]) for j in range(steps.shape[1])])
    return TaylorReport(radius, steps.shape[1], k, float(base), float(np.linalg.norm(g)), true, model, grad_term, seed)


def mean_gn_apply(params: nn.MlpParams, dataset: Dataset, k: int, vectors: np.ndarray) -> np.ndarray:
    """Mean of per-object Gauss-Newton products over the first ``k`` objects."""
    out = np.zeros_like(vectors, dtype=np.float64)
    for i in range(k):
        gn = hessian.factor_for(params, dataset.features[i], dataset.labels[i])
        out += hessian.gn_apply(gn, vectors)
    return out / k


def taylor_check(theta_star: nn.MlpParams, dataset: Dataset, k: int, radius: float, probes: int, seed: int = 0) -> TaylorReport:
    """Quadratic model of ``L_k`` around ``theta_star`` with the mean Gauss-Newton curvature.

    The gradient term is kept: a trained point is only near a minimum, and
    the report exposes the gradient norm there.
    """
    if not 1 <= k <= dataset.m:
        raise ValueError(f"k={k} out of range [1, {dataset.m}]")
    if radius < 0:
        raise ValueError("radius must be non-negative")
    if probes < 1:
        raise ValueError("probes must be >= 1")
    config = theta_star.config
    X, Y = dataset.features[:k], dataset.labels[:k]

    def loss_fn(theta):
        return math.fsum(nn.per_object_losses(nn.MlpParams.from_flat(config, theta), X, Y)) / k

    def grad_fn(theta):
        return nn.flat_grad_batch(nn.MlpParams.from_flat(config, theta), X, Y)

    def curvature_fn(vectors):
        return mean_gn_apply(theta_star, dataset, k, vectors)

    directions = probe_directions(config.num_params, probes, seed)
    return quadratic_model_check(loss_fn, grad_fn, curvature_fn, theta_star.flatten(), radius, directions, k, seed)
