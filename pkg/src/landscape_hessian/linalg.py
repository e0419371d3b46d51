"""Dense linear algebra helpers: norms, power iteration, Jacobi eigensolver.

Everything works on float64 numpy arrays. The Jacobi solver is deliberately
simple and is only meant to serve as an independent oracle on small inputs;
production code paths use LAPACK through numpy.
"""

from __future__ import annotations

import numpy as np

JACOBI_MAX_DIM = 2048


class PowerIterationError(RuntimeError):
    """Raised when power iteration fails to reach the requested tolerance."""

    def __init__(self, message: str, estimate: float, residual: float):
        super().__init__(f"{message} (last estimate {estimate!r}, residual {residual!r})")
        self.estimate = estimate
        self.residual = residual


def _as_matrix(m) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.size == 0:
        raise ValueError(f"expected a nonempty 2-D matrix, got shape {m.shape}")
    return m


def spectral_norm_power(m, tol: float = 1e-10, max_iter: int = 10_000, seed: int = 0) -> float:
    """Largest singular value of ``m`` by power iteration on its Gram matrix.

    Iterates on ``m.T @ m`` or ``m @ m.T`` (whichever is smaller) from a seeded
    uniform start and stops once the eigen-residual ``||B v - lam v||`` drops
    below ``tol * lam``. The Rayleigh quotient error is then of order
    ``tol**2``, so the returned value is well inside the requested relative
    tolerance.
    """
    m = _as_matrix(m)
    if tol <= 0:
        raise ValueError("tol must be positive")
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")

    gram = m.T @ m if m.shape[1] <= m.shape[0] else m @ m.T
    if not np.any(gram):
        return 0.0

    rng = np.random.default_rng(seed)
    v = rng.uniform(-1.0, 1.0, size=gram.shape[0])
    v /= np.linalg.norm(v)
    lam, residual = 0.0, np.inf
    for _ in range(max_iter):
        w = gram @ v
        lam = float(v @ w)
        residual = float(np.linalg.norm(w - lam * v))
        if residual <= tol * lam:
            return float(np.sqrt(lam))
        norm_w = np.linalg.norm(w)
        if norm_w == 0.0:
            # start vector landed in the null space; restart elsewhere
            v = rng.uniform(-1.0, 1.0, size=gram.shape[0])
            v /= np.linalg.norm(v)
            continue
        v = w / norm_w
    raise PowerIterationError(
        f"power iteration did not converge in {max_iter} iterations",
        float(np.sqrt(max(lam, 0.0))),
        residual,
    )


def frobenius_norm(m) -> float:
    m = _as_matrix(m)
    return float(np.sqrt(np.sum(m * m)))


def _round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    # Circle-method tournament: every index pair meets exactly once per sweep
    # and pairs within a round are disjoint, so their rotations commute.
    players = list(range(n + (n % 2)))
    size = len(players)
    rounds = []
    for _ in range(size - 1):
        pairs = [(players[i], players[size - 1 - i]) for i in range(size // 2)]
        pairs = [(min(a, b), max(a, b)) for a, b in pairs if a < n and b < n]
        if pairs:
            p, q = zip(*pairs)
            rounds.append((np.array(p), np.array(q)))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def jacobi_eigh(m, sym_tol: float = 1e-12, max_sweeps: int = 100):
    """Eigen-decomposition of a small symmetric matrix by cyclic Jacobi sweeps.

    Returns ``(values, vectors)`` with values in descending order and the
    matching eigenvectors in the columns of ``vectors``.
    """
    a = _as_matrix(m).copy()
    n = a.shape[0]
    if a.shape[1] != n:
        raise ValueError(f"matrix must be square, got {a.shape}")
    if n > JACOBI_MAX_DIM:
        raise ValueError(f"dimension {n} exceeds the Jacobi oracle limit {JACOBI_MAX_DIM}")
    asym = float(np.max(np.abs(a - a.T)))
    if asym > sym_tol:
        raise ValueError(f"matrix is not symmetric: max |m - m.T| = {asym:.3e}")
    a = 0.5 * (a + a.T)
    v = np.eye(n)

    scale = frobenius_norm(a)
    rounds = _round_robin(n)
    eps = np.finfo(np.float64).eps
    for _ in range(max_sweeps):
        off = frobenius_norm(a - np.diag(np.diag(a))) if n > 1 else 0.0
        if off <= eps * scale:
            break
        rotated = False
        for p, q in rounds:
            apq = a[p, q]
            # skip entries already negligible relative to their diagonal pair
            active = np.abs(apq) > eps * np.sqrt(np.abs(a[p, p] * a[q, q])) + 1e-300
            if not np.any(active):
                continue
            rotated = True
            p, q, apq = p[active], q[active], apq[active]
            theta = (a[q, q] - a[p, p]) / (2.0 * apq)
            t = np.where(theta == 0.0, 1.0, np.sign(theta) / (np.abs(theta) + np.hypot(theta, 1.0)))
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            ap, aq = a[:, p].copy(), a[:, q].copy()
            a[:, p] = c * ap - s * aq
            a[:, q] = s * ap + c * aq
            ap, aq = a[p, :].copy(), a[q, :].copy()
            a[p, :] = c[:, None] * ap - s[:, None] * aq
            a[q, :] = s[:, None] * ap + c[:, None] * aq
            vp, vq = v[:, p].copy(), v[:, q].copy()
            v[:, p] = c * vp - s * vq
            v[:, q] = s * vp + c * vq
        if not rotated:
            break

    values = np.diag(a).copy()
    order = np.argsort(values)[::-1]
    return values[order], v[:, order]


def sym_eig_small(m) -> np.ndarray:
    """Full spectrum of a small symmetric matrix, descending."""
    return jacobi_eigh(m)[0]


def kron_row_block(g_row, x) -> np.ndarray:
    """Row-major vec of ``outer(g_row, x)``: entry ``i*len(x) + j`` is ``g[i]*x[j]``."""
    g_row = np.asarray(g_row, dtype=np.float64).ravel()
    x = np.asarray(x, dtype=np.float64).ravel()
    if g_row.size == 0 or x.size == 0:
        raise ValueError("kron_row_block needs nonempty inputs")
    return np.outer(g_row, x).ravel()
