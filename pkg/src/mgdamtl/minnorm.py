"""Minimum-norm point in the convex hull of task gradients.

The problem is ``min_a a^T M a`` over the probability simplex, where ``M`` is
the Gram matrix of the task gradients. It is solved with Frank-Wolfe whose
line search is the closed-form two-point rule, so the loop never touches the
gradients themselves, only ``M``.
"""

from __future__ import annotations

import enum
import functools
import itertools
import math
from dataclasses import dataclass
from typing import NamedTuple

import numba
import numpy as np

from .core_types import GradientMatrix, GramMatrix, SimplexWeights, project_to_simplex


class StopReason(enum.Enum):
    GAMMA_ZERO = "gamma_zero"
    NORM_STALL = "norm_stall"
    ITERATION_LIMIT = "iteration_limit"
    # lattice enumeration in brute_force_min_norm; not a Frank-Wolfe outcome
    EXHAUSTIVE = "exhaustive"


_REASONS = (StopReason.GAMMA_ZERO, StopReason.NORM_STALL, StopReason.ITERATION_LIMIT)


@dataclass(frozen=True)
class SolverConfig:
    max_iterations: int = 250
    gamma_tolerance: float = 1e-4
    norm_stall_tolerance: float = 1e-7
    stationarity_threshold: float = 1e-8

    def __post_init__(self):
        if int(self.max_iterations) != self.max_iterations or self.max_iterations < 1:
            raise ValueError(f"max_iterations must be an integer >= 1, got {self.max_iterations}")
        for name in ("gamma_tolerance", "norm_stall_tolerance", "stationarity_threshold"):
            val = getattr(self, name)
            if not (val > 0 and math.isfinite(val)):
                raise ValueError(f"{name} must be a positive finite number, got {val}")

    @classmethod
    def tight(cls) -> "SolverConfig":
        """Tolerances that let plain Frank-Wolfe certify stationarity near 1e-8."""
        return cls(max_iterations=100_000, gamma_tolerance=1e-12, norm_stall_tolerance=1e-15)


@dataclass(frozen=True)
class MinNormSolution:
    weights: SimplexWeights
    squared_norm: float
    iterations: int
    converged_by: StopReason
    # objective value before the first iteration and after every iteration
    history: tuple[float, ...] = ()

    @property
    def alpha(self) -> np.ndarray:
        return self.weights.alpha


class LineSearch(NamedTuple):
    gamma: float
    degenerate: bool


@numba.njit(cache=True)
def _gamma_from_products(tt, tb, bb):
    # Minimiser over [0, 1] of |g theta + (1 - g) theta_bar|^2, given
    # tt = theta.theta, tb = theta.theta_bar, bb = theta_bar.theta_bar.
    if tb >= tt:
        return 1.0
    if tb >= bb:
        return 0.0
    return (bb - tb) / (tt + bb - 2.0 * tb)


def _rescale(a, b):
    # the minimiser is scale-invariant; unit max-abs keeps the products
    # away from underflow and overflow
    s = max(np.abs(a).max(), np.abs(b).max())
    return a / s, b / s


def two_point_gamma(theta, theta_bar) -> LineSearch:
    """Closed-form minimiser of ``|g*theta + (1-g)*theta_bar|^2`` over ``g in [0, 1]``.

    Either an endpoint is optimal or the minimiser is the foot of the
    perpendicular from the origin onto the segment. When both vectors are
    zero every ``g`` is optimal; 0.5 is returned with ``degenerate=True``.
    """
    a = np.asarray(theta, dtype=np.float64).ravel()
    b = np.asarray(theta_bar, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValueError("two_point_gamma received non-finite input")
    if not a.any() and not b.any():
        return LineSearch(0.5, True)
    a, b = _rescale(a, b)
    return LineSearch(float(_gamma_from_products(a @ a, a @ b, b @ b)), False)


def two_task_alpha(g1, g2) -> LineSearch:
    """Weight on ``g1`` of the min-norm combination ``a*g1 + (1-a)*g2``.

    ``a = clip((g2 - g1).g2 / |g1 - g2|^2, 0, 1)``. Identical gradients make
    every ``a`` optimal; 0.5 is returned with ``degenerate=True``.
    """
    a = np.asarray(g1, dtype=np.float64).ravel()
    b = np.asarray(g2, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValueError("two_task_alpha received non-finite input")
    if np.array_equal(a, b):
        return LineSearch(0.5, True)
    a, b = _rescale(a, b)
    diff = a - b
    denom = diff @ diff
    return LineSearch(float(min(max((b - a) @ b / denom, 0.0), 1.0)), False)


@numba.njit(cache=True)
def _quad(m, a):
    n = a.shape[0]
    s = 0.0
    for i in range(n):
        row = 0.0
        for j in range(n):
            row += m[i, j] * a[j]
        s += a[i] * row
    return s


@numba.njit(cache=True)
def _frank_wolfe_kernel(m, max_iter, gamma_tol, stall_tol, history):
    n = m.shape[0]
    alpha = np.full(n, 1.0 / n)
    f = _quad(m, alpha)
    history[0] = f
    v = np.empty(n)
    for k in range(1, max_iter + 1):
        for i in range(n):
            s = 0.0
            for j in range(n):
                s += m[i, j] * alpha[j]
            v[i] = s
        # argmin with lowest-index tie-breaking
        t = 0
        for i in range(1, n):
            if v[i] < v[t]:
                t = i
        if v[t] >= f:
            # non-positive duality gap: alpha is already optimal, step is zero
            history[k] = f
            return alpha, f, k, 0
        gamma = _gamma_from_products(m[t, t], v[t], f)
        for i in range(n):
            alpha[i] *= 1.0 - gamma
        alpha[t] += gamma
        f_new = _quad(m, alpha)
        history[k] = f_new
        if gamma < gamma_tol:
            return alpha, f_new, k, 0
        if f - f_new < stall_tol * f:
            return alpha, f_new, k, 1
        f = f_new
    return alpha, f, max_iter, 2


def frank_wolfe_min_norm(gram: GramMatrix, config: SolverConfig = SolverConfig()) -> MinNormSolution:
    """Frank-Wolfe over the simplex for ``min a^T M a``.

    Starts from uniform weights; each iteration moves toward the vertex with
    the smallest ``(M a)_r`` (lowest index on ties) by the exact line-search
    step. Stops when the step falls below ``config.gamma_tolerance``, when the
    objective improves by less than ``config.norm_stall_tolerance`` relative,
    or after ``config.max_iterations`` iterations.
    """
    if not isinstance(gram, GramMatrix):
        gram = GramMatrix(gram)
    n = gram.size
    if n == 1:
        f = float(gram.m[0, 0])
        return MinNormSolution(SimplexWeights(np.ones(1)), f, 0, StopReason.GAMMA_ZERO, (f,))
    history = np.full(config.max_iterations + 1, np.nan)
    alpha, _, iters, code = _frank_wolfe_kernel(
        np.ascontiguousarray(gram.m), int(config.max_iterations),
        float(config.gamma_tolerance), float(config.norm_stall_tolerance), history,
    )
    weights = project_to_simplex(alpha)
    return MinNormSolution(
        weights=weights,
        squared_norm=max(gram.quadratic(weights.alpha), 0.0),
        iterations=int(iters),
        converged_by=_REASONS[code],
        history=tuple(history[: iters + 1].tolist()),
    )


def min_norm_of_gradients(grads: GradientMatrix, config: SolverConfig = SolverConfig()) -> MinNormSolution:
    return frank_wolfe_min_norm(grads.gram(), config)


def _compositions(total: int, parts: int) -> np.ndarray:
    """All nonnegative integer vectors of length ``parts`` with sum <= ``total``."""
    out = np.zeros((1, 0), dtype=np.int64)
    for _ in range(parts):
        used = out.sum(axis=1)
        counts = total - used + 1
        rep = np.repeat(out, counts, axis=0)
        offsets = np.concatenate([np.arange(c) for c in counts])
        out = np.hstack([rep, offsets[:, None]])
    return out


@functools.lru_cache(maxsize=8)
def _lattice_segments(n: int, k_total: int) -> tuple[np.ndarray, np.ndarray]:
    # one row per prefix: a = base + j * step * (e_{n-2} - e_{n-1}), j in [0, rem]
    prefix = _compositions(k_total, n - 2)
    rem = k_total - prefix.sum(axis=1)
    base = np.zeros((prefix.shape[0], n))
    base[:, : n - 2] = prefix / k_total
    base[:, n - 1] = rem / k_total
    base.setflags(write=False)
    rem.setflags(write=False)
    return base, rem


def lattice_prefix_count(n_tasks: int, grid_step: float) -> int:
    k = int(round(1.0 / grid_step))
    p = max(n_tasks - 2, 0)
    return math.comb(k + p, p)


def brute_force_min_norm(gram: GramMatrix, grid_step: float = 1e-3, max_points: int = 5_000_000) -> MinNormSolution:
    """Exact minimum of ``a^T M a`` over the simplex lattice with spacing ``grid_step``.

    The first ``T - 2`` coordinates are enumerated exhaustively. For each
    prefix the last two coordinates share the remaining mass, and the
    objective along that lattice segment is a 1-D convex quadratic whose
    lattice minimiser is the floor or ceiling of its continuous minimiser.
    The result is the same as evaluating every lattice point.
    """
    if not isinstance(gram, GramMatrix):
        gram = GramMatrix(gram)
    if not (0 < grid_step <= 0.5):
        raise ValueError(f"grid_step must lie in (0, 0.5], got {grid_step}")
    k_total = int(round(1.0 / grid_step))
    if abs(k_total * grid_step - 1.0) > 1e-9:
        raise ValueError(f"1/grid_step must be an integer, got grid_step={grid_step}")
    m = gram.m
    n = gram.size
    if n == 1:
        return MinNormSolution(SimplexWeights(np.ones(1)), float(m[0, 0]), 1, StopReason.EXHAUSTIVE)
    n_prefix = lattice_prefix_count(n, grid_step)
    if n_prefix > max_points:
        raise ValueError(
            f"lattice for T={n}, grid_step={grid_step} needs {n_prefix} prefixes, budget is {max_points}"
        )
    base, rem = _lattice_segments(n, k_total)
    u = np.zeros(n)
    u[n - 2], u[n - 1] = 1.0, -1.0
    mu = m @ u
    uu = u @ mu
    lin = base @ mu
    if uu > 0:
        j_star = -lin / (uu * grid_step)
        cands = [np.clip(np.floor(j_star), 0, rem), np.clip(np.ceil(j_star), 0, rem)]
    else:
        cands = [np.zeros_like(rem, dtype=np.float64), rem.astype(np.float64)]
    const = np.einsum("ij,ij->i", base @ m, base)
    best_val = np.full(base.shape[0], np.inf)
    best_j = np.zeros(base.shape[0])
    for j in cands:
        s = j * grid_step
        val = const + 2.0 * s * lin + s * s * uu
        better = val < best_val
        best_val[better] = val[better]
        best_j[better] = j[better]
    i = int(np.argmin(best_val))
    alpha = base[i] + best_j[i] * grid_step * u
    weights = project_to_simplex(np.clip(alpha, 0.0, None))
    return MinNormSolution(weights, max(gram.quadratic(weights.alpha), 0.0), int(n_prefix), StopReason.EXHAUSTIVE)


def simplex_lattice(n_tasks: int, grid_step: float) -> np.ndarray:
    """Every point of the simplex lattice, one row per point (lexicographic order)."""
    k_total = int(round(1.0 / grid_step))
    pts = [c + (k_total - sum(c),) for c in itertools.product(range(k_total + 1), repeat=n_tasks - 1)
           if sum(c) <= k_total]
    return np.array(pts, dtype=np.float64) / k_total


def is_pareto_stationary(solution: MinNormSolution, config: SolverConfig = SolverConfig()) -> bool:
    return solution.squared_norm <= config.stationarity_threshold
