"""Independent reference computations used by the tests and the verify suite.

Nothing here shares code paths with the solver or the analytic backward
passes it is used to check.
"""

from __future__ import annotations

import itertools

import numpy as np
from scipy.optimize import linprog

from .core_types import GramMatrix


def face_enumeration_min_norm(gram, cond_limit: float = 1e12) -> tuple[np.ndarray, float]:
    """Exact ``min a^T M a`` over the simplex by enumerating supports.

    For every non-empty support ``S`` the equality-constrained problem on the
    face is solved from its KKT system; feasible candidates are compared and
    the best is returned. Some optimal solution always has affinely
    independent support, for which the KKT matrix is nonsingular, so
    skipping ill-conditioned systems loses nothing. Cost is ``2^T`` small
    solves; intended for ``T <= 12``.
    """
    m = gram.m if isinstance(gram, GramMatrix) else np.asarray(gram, dtype=np.float64)
    n = m.shape[0]
    if n > 12:
        raise ValueError(f"face enumeration is exponential in T; refusing T={n}")
    best_val, best_alpha = np.inf, None
    for size in range(1, n + 1):
        for support in itertools.combinations(range(n), size):
            idx = np.array(support)
            k = np.zeros((size + 1, size + 1))
            k[:size, :size] = 2.0 * m[np.ix_(idx, idx)]
            k[:size, size] = 1.0
            k[size, :size] = 1.0
            if np.linalg.cond(k) > cond_limit:
                continue
            rhs = np.zeros(size + 1)
            rhs[size] = 1.0
            sol = np.linalg.solve(k, rhs)
            a_s = sol[:size]
            if a_s.min() < -1e-12:
                continue
            alpha = np.zeros(n)
            alpha[idx] = np.clip(a_s, 0.0, None)
            alpha /= alpha.sum()
            val = float(alpha @ m @ alpha)
            if val < best_val:
                best_val, best_alpha = val, alpha
    return best_alpha, max(best_val, 0.0)


def central_difference_gradient(fn, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of a scalar function of a flat float64 vector."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for j in range(x.size):
        orig = x[j]
        x[j] = orig + h
        fp = fn(x)
        x[j] = orig - h
        fm = fn(x)
        x[j] = orig
        grad[j] = (fp - fm) / (2.0 * h)
    return grad


def central_difference_jacobian(fn, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Columns are central differences of a vector-valued ``fn``."""
    x = np.array(x, dtype=np.float64)
    cols = []
    for j in range(x.size):
        orig = x[j]
        x[j] = orig + h
        fp = np.asarray(fn(x), dtype=np.float64).ravel()
        x[j] = orig - h
        fm = np.asarray(fn(x), dtype=np.float64).ravel()
        x[j] = orig
        cols.append((fp - fm) / (2.0 * h))
    return np.stack(cols, axis=1)


def relative_error(a, b, floor: float = 1e-10) -> float:
    """Norm-wise relative error ``|a - b| / max(|a|, |b|, floor)``."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), floor))


def in_hull_lp(points: np.ndarray, x: np.ndarray) -> bool:
    """Feasibility of ``x = points^T a`` with ``a`` on the simplex, via an LP."""
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    a_eq = np.vstack([points.T, np.ones((1, n))])
    b_eq = np.concatenate([np.asarray(x, dtype=np.float64), [1.0]])
    res = linprog(np.zeros(n), A_eq=a_eq, b_eq=b_eq, bounds=[(0, None)] * n, method="highs")
    return res.status == 0
