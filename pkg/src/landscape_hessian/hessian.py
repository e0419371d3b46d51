"""Factored Gauss-Newton Hessian of the per-object loss and its norm bounds.

For one object the Gauss-Newton part of the loss Hessian is ``F.T @ A @ F``
where ``F`` (K x P) is the Jacobian of the logits with respect to ``theta``
and ``A = diag(p) - p p.T`` is the Hessian of cross-entropy with respect to
the logits. ``F`` is assembled layer by layer from the logit sensitivities
``G_p = dz/dz_p`` and the cached layer inputs, never forming the P x P matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import nn
from .linalg import spectral_norm_power

SQRT2 = math.sqrt(2.0)
DENSE_MAX_PARAMS = 2000


@dataclass
class FactoredGaussNewton:
    f: np.ndarray  # K x P logit Jacobian
    a: np.ndarray  # K x K logit Hessian

    @property
    def num_params(self) -> int:
        return self.f.shape[1]


@dataclass
class BoundConstants:
    m_w: float
    m_x: float
    m_elem: float
    m_loss: float
    m_h: float
    h: int
    L: int

    @property
    def lemma1_hypothesis(self) -> bool:
        """Whether ``m_w <= h * m_elem``, the step from the global-norm bound to the width bound."""
        return self.m_w <= self.h * self.m_elem + 1e-9


def logit_hessian(probs) -> np.ndarray:
    """``diag(p) - p p.T`` for a probability vector ``p``."""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1 or p.size < 2:
        raise ValueError(f"probs must be a vector with at least two entries, got shape {p.shape}")
    if np.any(p < 0) or np.any(p > 1):
        raise ValueError("probs must lie in [0, 1]")
    if abs(p.sum() - 1.0) > 1e-9:
        raise ValueError(f"probs sum to {p.sum()!r}, not 1")
    return np.diag(p) - np.outer(p, p)


def logit_hessian_batch(probs: np.ndarray) -> np.ndarray:
    """Stacked logit Hessians for the rows of ``probs``, shape (N, K, K)."""
    probs = np.asarray(probs, dtype=np.float64)
    a = -probs[:, :, None] * probs[:, None, :]
    idx = np.arange(probs.shape[1])
    a[:, idx, idx] += probs
    return a


def jacobian_chain(params: nn.MlpParams, trace: nn.ForwardTrace) -> list[np.ndarray]:
    """``G_p = dz/dz_p`` for every layer, with ``G_L`` the K x K identity.

    Built backwards through ``G_p = G_{p+1} W_{p+1} D_p``.
    """
    L = params.num_layers
    if len(trace.pre_activations) != L or len(trace.masks) != L - 1:
        raise ValueError("trace does not match the parameter layout")
    K = params.config.num_classes
    chain = [None] * L
    chain[L - 1] = np.eye(K)
    for p in range(L - 2, -1, -1):
        chain[p] = (chain[p + 1] @ params.weights[p + 1]) * trace.masks[p][None, :]
    return chain


def assemble_factor(chain: list[np.ndarray], trace: nn.ForwardTrace, config: nn.MlpConfig) -> FactoredGaussNewton:
    """Stack the per-layer blocks ``[G_p.T kron x_p ; G_p.T]`` into the K x P factor.

    Row ``k`` of the weight block of layer ``p`` is the row-major vec of
    ``outer(G_p[k], x_p)``, which matches the flattening order of ``theta``.
    """
    shapes = config.layer_shapes
    if len(chain) != len(shapes) or len(trace.layer_inputs) != len(shapes):
        raise ValueError("chain, trace and config disagree on the number of layers")
    K = config.num_classes
    blocks = []
    for g, x, (o, i) in zip(chain, trace.layer_inputs, shapes):
        if g.shape != (K, o) or x.shape != (i,):
            raise ValueError(f"inconsistent block shapes: G{g.shape}, x{x.shape}, layer ({o}, {i})")
        blocks.append((g[:, :, None] * x[None, None, :]).reshape(K, o * i))
        if config.bias:
            blocks.append(g)
    f = np.concatenate(blocks, axis=1)
    return FactoredGaussNewton(f, logit_hessian(trace.probs))


def factor_for(params: nn.MlpParams, x, y) -> FactoredGaussNewton:
    trace = nn.forward(params, x, y)
    return assemble_factor(jacobian_chain(params, trace), trace, params.config)


def gn_apply(gn: FactoredGaussNewton, v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.shape[0] != gn.num_params:
        raise ValueError(f"vector has length {v.shape[0]}, expected {gn.num_params}")
    return gn.f.T @ (gn.a @ (gn.f @ v))


def gn_dense(gn: FactoredGaussNewton) -> np.ndarray:
    if gn.num_params > DENSE_MAX_PARAMS:
        raise ValueError(f"P={gn.num_params} exceeds the dense limit {DENSE_MAX_PARAMS}")
    h = gn.f.T @ (gn.a @ gn.f)
    return 0.5 * (h + h.T)


def _psd_sqrt(a: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(a)
    w = np.where(w < 1e-12, 0.0, w)
    return (v * np.sqrt(w)) @ v.T


def gn_spectral_norm(gn: FactoredGaussNewton) -> float:
    """Exact ``||F.T A F||_2`` through the K x K matrix ``A^1/2 F F.T A^1/2``."""
    root = _psd_sqrt(gn.a)
    s = root @ (gn.f @ gn.f.T) @ root
    s = 0.5 * (s + s.T)
    return float(max(np.linalg.eigvalsh(s)[-1], 0.0))


def finite_diff_hessian_fn(grad_fn, theta, eps: float = 1e-5) -> np.ndarray:
    """Symmetrised central-difference Jacobian of ``grad_fn`` at ``theta``."""
    theta = np.asarray(theta, dtype=np.float64)
    P = theta.size
    if P > DENSE_MAX_PARAMS:
        raise ValueError(f"P={P} exceeds the dense limit {DENSE_MAX_PARAMS}")
    if eps <= 0:
        raise ValueError("eps must be positive")
    h = np.empty((P, P))
    for j in range(P):
        tp, tm = theta.copy(), theta.copy()
        tp[j] += eps
        tm[j] -= eps
        h[:, j] = (grad_fn(tp) - grad_fn(tm)) / (2.0 * eps)
    return 0.5 * (h + h.T)


def finite_diff_hessian(params: nn.MlpParams, x, y, eps: float = 1e-5) -> np.ndarray:
    """Full loss Hessian (G-term plus H-term) by differencing backprop gradients."""
    config = params.config

    def grad_fn(theta):
        return nn.grad(nn.MlpParams.from_flat(config, theta), x, y)

    return finite_diff_hessian_fn(grad_fn, params.flatten(), eps)


def _geometric(r: float, L: int) -> float:
    # sum_{j=1..L} r**j, written as r (r**L - 1) / (r - 1)
    if abs(r - 1.0) < 1e-12:
        return float(L)
    if r == 0.0:
        return 0.0
    return r * math.expm1(L * math.log(r)) / (r - 1.0)


def theorem1_bound(m_x: float, m_w: float, L: int) -> float:
    """Hessian norm bound from input-norm and layer-norm maxima."""
    if m_x < 0 or m_w < 0:
        raise ValueError("norm bounds must be non-negative")
    if L < 1:
        raise ValueError("L must be >= 1")
    r = m_w * m_w
    return L * SQRT2 * m_x * m_x * r**L + SQRT2 * _geometric(r, L)


def lemma1_bound(m_x: float, h: int, m_elem: float, L: int) -> float:
    """The global-norm bound with every layer norm replaced by ``h * m_elem``."""
    return theorem1_bound(m_x, h * m_elem, L)


def layer_norms(params: nn.MlpParams) -> list[float]:
    return [spectral_norm_power(w) for w in params.weights]


def layerwise_bound(params: nn.MlpParams, trace: nn.ForwardTrace, norms: list[float] | None = None) -> float:
    """``sqrt(2) * sum_p (||x_p||^2 + 1) * prod_{s>=p} ||W_s||^2``.

    ``norms`` may carry precomputed layer spectral norms to avoid repeating
    power iteration per object.
    """
    if norms is None:
        norms = layer_norms(params)
    sq = [n * n for n in norms]
    total = 0.0
    for p, x in enumerate(trace.layer_inputs):
        total += (float(x @ x) + 1.0) * math.prod(sq[p:])
    return SQRT2 * total


def measure_constants(params: nn.MlpParams, dataset, theta_star: nn.MlpParams | None = None) -> BoundConstants:
    """Tight empirical constants for the bounds over ``dataset``.

    Layer constants come from ``params``; the loss maximum is taken at
    ``theta_star`` (defaults to ``params``).
    """
    if theta_star is None:
        theta_star = params
    m_w = max(layer_norms(params))
    m_x = float(np.max(np.linalg.norm(dataset.features, axis=1)))
    m_elem = max(float(np.max(np.abs(w))) for w in params.weights)
    m_loss = float(np.max(nn.per_object_losses(theta_star, dataset.features, dataset.labels)))
    L = params.num_layers
    return BoundConstants(m_w, m_x, m_elem, m_loss, theorem1_bound(m_x, m_w, L), params.config.hidden_dim, L)
