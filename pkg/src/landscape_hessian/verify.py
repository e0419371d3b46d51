"""Independent numerical oracles for every analytic construction.

Each check builds its own tiny random fixtures, compares an analytic quantity
against a finite-difference or dense-eigensolver reference, and reports the
worst error seen against a fixed tolerance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import hessian, nn
from .linalg import frobenius_norm, sym_eig_small

# Central-difference roundoff on O(1) losses with eps=1e-5 is ~1e-11, so
# coordinates below this magnitude are compared on an absolute footing.
REL_FLOOR = 1e-6
# Hidden pre-activations closer than this to zero are resampled so that a
# finite-difference step never crosses a ReLU kink.
KINK_MARGIN = 1e-3


@dataclass
class CheckResult:
    name: str
    max_error: float
    tolerance: float
    cases: int

    @property
    def passed(self) -> bool:
        return bool(self.max_error <= self.tolerance)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: max_error={self.max_error:.3e} tol={self.tolerance:.1e} cases={self.cases}"


def rel_error(actual, expected, floor: float = REL_FLOOR) -> float:
    """Largest coordinate-wise relative error, magnitudes floored at ``floor``."""
    actual = np.asarray(actual, dtype=np.float64)
    expected = np.asarray(expected, dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(actual), np.abs(expected)), floor)
    return float(np.max(np.abs(actual - expected) / scale))


def random_tiny_net(rng: np.random.Generator, bias: bool | None = None, num_layers: int | None = None):
    """A small random network with a kink-free input and a random one-hot target."""
    if bias is None:
        bias = bool(rng.integers(2))
    config = nn.MlpConfig(
        input_dim=int(rng.integers(2, 5)),
        hidden_dim=int(rng.integers(2, 6)),
        num_layers=int(num_layers or rng.integers(1, 4)),
        num_classes=int(rng.integers(2, 5)),
        bias=bias,
    )
    params = nn.init_params(config, int(rng.integers(2**31)))
    if bias:
        params.biases = [rng.uniform(-0.5, 0.5, size=b.shape) for b in params.biases]
    y = np.zeros(config.num_classes)
    y[rng.integers(config.num_classes)] = 1.0
    for _ in range(1000):
        x = rng.uniform(-1.0, 1.0, size=config.input_dim)
        trace = nn.forward(params, x, y)
        if all(np.min(np.abs(z)) > KINK_MARGIN for z in trace.pre_activations[:-1]):
            return params, x, y
    raise RuntimeError("could not find a kink-free input")


def _central_jacobian(fn, theta, eps):
    cols = []
    for j in range(theta.size):
        tp, tm = theta.copy(), theta.copy()
        tp[j] += eps
        tm[j] -= eps
        cols.append((fn(tp) - fn(tm)) / (2.0 * eps))
    return np.stack(cols, axis=-1)


def check_gradient(rng, nets: int = 20, eps: float = 1e-5, tol: float = 1e-5) -> CheckResult:
    worst = 0.0
    for _ in range(nets):
        params, x, y = random_tiny_net(rng)
        config = params.config

        def loss(theta):
            return np.array(nn.forward(nn.MlpParams.from_flat(config, theta), x, y).loss)

        fd = _central_jacobian(loss, params.flatten(), eps)
        worst = max(worst, rel_error(nn.grad(params, x, y), fd))
    return CheckResult("gradient_vs_central_differences", worst, tol, nets)


def check_factor(rng, nets: int = 20, eps: float = 1e-5, tol: float = 1e-6) -> CheckResult:
    worst = 0.0
    for _ in range(nets):
        params, x, y = random_tiny_net(rng)
        config = params.config

        def logits(theta):
            return nn.forward(nn.MlpParams.from_flat(config, theta), x, y).logits

        fd = _central_jacobian(logits, params.flatten(), eps)
        worst = max(worst, rel_error(hessian.factor_for(params, x, y).f, fd))
    return CheckResult("factor_vs_logit_jacobian", worst, tol, nets)


def _replay_logits(params: nn.MlpParams, p: int, z_p: np.ndarray) -> np.ndarray:
    h = z_p
    for s in range(p, params.num_layers - 1):
        h = np.where(h >= 0, h, 0.0)
        h = params.weights[s + 1] @ h + params.biases[s + 1]
    return h


def check_chain(rng, nets: int = 20, eps: float = 1e-5, tol: float = 1e-5) -> CheckResult:
    worst = 0.0
    for _ in range(nets):
        params, x, y = random_tiny_net(rng)
        trace = nn.forward(params, x, y)
        chain = hessian.jacobian_chain(params, trace)
        for p, z in enumerate(trace.pre_activations):
            fd = _central_jacobian(lambda zp: _replay_logits(params, p, zp), z.copy(), eps)
            worst = max(worst, rel_error(chain[p], fd))
    return CheckResult("chain_vs_replay_differences", worst, tol, nets)


def check_logit_hessian(rng, cases: int = 50, eps: float = 1e-5, tol: float = 1e-6) -> CheckResult:
    worst = 0.0
    for _ in range(cases):
        K = int(rng.integers(2, 11))
        z = rng.normal(scale=2.0, size=K)
        y = np.zeros(K)
        y[rng.integers(K)] = 1.0

        def ce_grad(zz):
            e = np.exp(zz - zz.max())
            return e / e.sum() - y

        fd = _central_jacobian(ce_grad, z, eps)
        # absolute: entries of A are bounded by 1/4
        worst = max(worst, float(np.max(np.abs(hessian.logit_hessian(nn.softmax(z)) - fd))))
    return CheckResult("logit_hessian_vs_central_differences", worst, tol, cases)


def check_logit_hessian_properties(rng, cases: int = 200) -> CheckResult:
    """PSD, zero row sums and the sqrt(2) Frobenius bound, folded into one excess."""
    worst = 0.0
    for _ in range(cases):
        K = int(rng.integers(2, 12))
        a = hessian.logit_hessian(nn.softmax(rng.normal(scale=rng.uniform(0.1, 10.0), size=K)))
        worst = max(
            worst,
            max(-float(sym_eig_small(a)[-1]) - 1e-10, 0.0),
            max(float(np.max(np.abs(a.sum(axis=1)))) - 1e-12, 0.0),
            max(frobenius_norm(a) - math.sqrt(2.0), 0.0),
        )
    return CheckResult("logit_hessian_psd_rowsum_frobenius", worst, 0.0, cases)


def check_spectral_norm(rng, nets: int = 50, tol: float = 1e-9) -> CheckResult:
    worst = 0.0
    for _ in range(nets):
        params, x, y = random_tiny_net(rng)
        gn = hessian.factor_for(params, x, y)
        top = float(sym_eig_small(hessian.gn_dense(gn))[0])
        got = hessian.gn_spectral_norm(gn)
        worst = max(worst, abs(got - top) / max(abs(top), 1e-300))
    return CheckResult("gn_spectral_norm_vs_dense_eigensolver", worst, tol, nets)


def check_rank(rng, nets: int = 20, tol: float = 1e-10) -> CheckResult:
    worst = 0.0
    for _ in range(nets):
        params, x, y = random_tiny_net(rng)
        gn = hessian.factor_for(params, x, y)
        vals = sym_eig_small(hessian.gn_dense(gn))
        K = params.config.num_classes
        if vals.size > K and vals[0] > 0:
            worst = max(worst, float(np.max(np.abs(vals[K:]))) / vals[0])
    return CheckResult("gn_rank_at_most_K", worst, tol, nets)


def check_linear_exactness(rng, models: int = 10, eps: float = 1e-5, tol: float = 1e-5) -> CheckResult:
    worst = 0.0
    for _ in range(models):
        params, x, y = random_tiny_net(rng, num_layers=1)
        dense = hessian.gn_dense(hessian.factor_for(params, x, y))
        fd = hessian.finite_diff_hessian(params, x, y, eps)
        worst = max(worst, float(np.max(np.abs(dense - fd))))
    return CheckResult("single_layer_gn_equals_full_hessian", worst, tol, models)


def run_all(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    checks = [
        check_gradient,
        check_factor,
        check_chain,
        check_logit_hessian,
        check_logit_hessian_properties,
        check_spectral_norm,
        check_rank,
        check_linear_exactness,
    ]
    return [check(rng) for check in checks]
