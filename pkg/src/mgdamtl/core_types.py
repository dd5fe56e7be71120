"""Value types shared by the solver, the models and the training loop.

All solver-side arithmetic is float64. Arrays stored on the frozen types are
copied and marked read-only on construction.
"""

from __future__ import annotations

import io
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

NONNEG_TOL = 1e-12
SUM_TOL = 1e-9
SYMMETRY_RTOL = 1e-9
PSD_RTOL = 1e-8

# Random streams: every draw comes from default_rng([seed, purpose, *sub]),
# so changing one purpose (say, the batch order) never perturbs another.
STREAM_DATA = 0
STREAM_INIT = 1
STREAM_SHUFFLE = 2


def rng_stream(seed: int, purpose: int, *sub: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(purpose), *map(int, sub)])


def _frozen(a, dtype=np.float64) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class SimplexWeights:
    """Convex-combination coefficients: nonnegative, summing to one."""

    alpha: np.ndarray

    def __post_init__(self):
        a = _frozen(self.alpha)
        if a.ndim != 1 or a.size == 0:
            raise ValueError(f"simplex weights must be a non-empty vector, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValueError(f"simplex weights contain non-finite entries: {a}")
        if a.min() < -NONNEG_TOL:
            raise ValueError(f"simplex weights must be >= 0, min is {a.min():.3e}")
        if abs(a.sum() - 1.0) > SUM_TOL:
            raise ValueError(f"simplex weights must sum to 1, sum is {a.sum():.17g}")
        object.__setattr__(self, "alpha", a)

    @property
    def size(self) -> int:
        return self.alpha.size

    @classmethod
    def uniform(cls, n: int) -> "SimplexWeights":
        return cls(np.full(n, 1.0 / n))

    def __len__(self):
        return self.alpha.size

    def __iter__(self):
        return iter(self.alpha.tolist())


@dataclass(frozen=True)
class LossVector:
    """Per-task empirical losses."""

    values: np.ndarray

    def __post_init__(self):
        v = _frozen(self.values)
        if v.ndim != 1 or v.size == 0:
            raise ValueError(f"loss vector must be a non-empty vector, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError(f"loss vector contains non-finite entries: {v}")
        if v.min() < 0:
            raise ValueError(f"losses must be >= 0, got {v}")
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.values.size

    def __getitem__(self, t):
        return float(self.values[t])

    def dominates(self, other: "LossVector") -> bool:
        """True when ``self`` is no worse on every task and differs somewhere."""
        if len(self) != len(other):
            raise ValueError("loss vectors have different task counts")
        return bool(np.all(self.values <= other.values) and np.any(self.values != other.values))


@dataclass(frozen=True)
class GramMatrix:
    """Pairwise inner products of task gradients, ``m[i, j] = g_i . g_j``."""

    m: np.ndarray

    def __post_init__(self):
        m = _frozen(self.m)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] == 0:
            raise ValueError(f"Gram matrix must be square and non-empty, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("Gram matrix contains non-finite entries")
        scale = np.abs(m).max()
        asym = np.abs(m - m.T).max()
        if asym > SYMMETRY_RTOL * scale:
            raise ValueError(f"Gram matrix is not symmetric (max asymmetry {asym:.3e}, scale {scale:.3e})")
        eig = np.linalg.eigvalsh(m)
        if eig.min() < -PSD_RTOL * np.abs(eig).max():
            raise ValueError(f"Gram matrix is not positive semidefinite (min eigenvalue {eig.min():.3e})")
        object.__setattr__(self, "m", m)

    @property
    def size(self) -> int:
        return self.m.shape[0]

    def quadratic(self, alpha) -> float:
        a = np.asarray(alpha, dtype=np.float64)
        return float(a @ self.m @ a)


@dataclass(frozen=True)
class GradientMatrix:
    """Row ``t`` is the gradient of task ``t`` over one shared coordinate space."""

    data: np.ndarray

    def __post_init__(self):
        g = _frozen(self.data)
        if g.ndim != 2 or g.shape[0] == 0:
            raise ValueError(f"gradient matrix must be 2-D with at least one row, got shape {g.shape}")
        if not np.all(np.isfinite(g)):
            bad = np.argwhere(~np.isfinite(g))[0]
            raise ValueError(f"gradient matrix has a non-finite entry at row {bad[0]}, column {bad[1]}")
        object.__setattr__(self, "data", g)

    @classmethod
    def from_rows(cls, rows: Sequence[np.ndarray]) -> "GradientMatrix":
        return cls(np.stack([np.asarray(r, dtype=np.float64).ravel() for r in rows]))

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def gram(self) -> GramMatrix:
        m = self.data @ self.data.T
        return GramMatrix(0.5 * (m + m.T))

    def combine(self, weights) -> np.ndarray:
        """Weighted sum of rows, ``sum_t w_t g_t``."""
        w = weights.alpha if isinstance(weights, SimplexWeights) else np.asarray(weights, dtype=np.float64)
        if w.shape != (self.rows,):
            raise ValueError(f"expected {self.rows} weights, got shape {w.shape}")
        return w @ self.data


@dataclass
class ParameterStore:
    """Flat parameter blocks: one shared block and one block per task.

    Block sizes are fixed at construction; updates happen in place through
    the owning model.
    """

    shared: np.ndarray
    task_blocks: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        self.shared = np.ascontiguousarray(self.shared, dtype=np.float64).ravel()
        self.task_blocks = [np.ascontiguousarray(b, dtype=np.float64).ravel() for b in self.task_blocks]
        self.check_finite()

    @property
    def n_tasks(self) -> int:
        return len(self.task_blocks)

    @property
    def sizes(self) -> tuple[int, tuple[int, ...]]:
        return self.shared.size, tuple(b.size for b in self.task_blocks)

    def copy(self) -> "ParameterStore":
        return ParameterStore(self.shared.copy(), [b.copy() for b in self.task_blocks])

    def check_finite(self):
        if not np.all(np.isfinite(self.shared)):
            raise FloatingPointError("shared parameters contain non-finite values")
        for t, b in enumerate(self.task_blocks):
            if not np.all(np.isfinite(b)):
                raise FloatingPointError(f"parameters of task {t} contain non-finite values")


def project_to_simplex(alpha) -> SimplexWeights:
    """Euclidean projection onto the probability simplex.

    Inputs that already satisfy the simplex invariants are returned unchanged,
    so repeated application is exact. Otherwise the sort-based projection is
    used: find the threshold ``tau`` with ``sum(max(a - tau, 0)) = 1``.
    """
    a = np.asarray(alpha, dtype=np.float64)
    if a.ndim != 1 or a.size == 0:
        raise ValueError(f"expected a non-empty vector, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"cannot project non-finite weights onto the simplex: {a}")
    if a.min() >= -NONNEG_TOL and abs(a.sum() - 1.0) <= SUM_TOL:
        return SimplexWeights(a)
    u = np.sort(a)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, a.size + 1)
    rho = np.nonzero(u - css / k > 0)[0][-1]
    tau = css[rho] / (rho + 1.0)
    p = np.maximum(a - tau, 0.0)
    # one renormalisation pass absorbs rounding in tau
    return SimplexWeights(p / p.sum())


def format_gradient_matrix(grads: GradientMatrix) -> str:
    """Text interchange format: header ``T d`` then one row per task."""
    buf = io.StringIO()
    buf.write(f"{grads.rows} {grads.dim}\n")
    for row in grads.data:
        buf.write(" ".join(repr(float(x)) for x in row))
        buf.write("\n")
    return buf.getvalue()


def parse_gradient_matrix(text: str) -> GradientMatrix:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValueError("gradient file is empty")
    header = lines[0].split()
    if len(header) != 2:
        raise ValueError(f"gradient file header must be 'T d', got {lines[0]!r}")
    try:
        n_rows, dim = int(header[0]), int(header[1])
    except ValueError:
        raise ValueError(f"gradient file header must hold two integers, got {lines[0]!r}") from None
    if n_rows < 1 or dim < 1:
        raise ValueError(f"gradient file header needs T >= 1 and d >= 1, got {n_rows} {dim}")
    if len(lines) - 1 != n_rows:
        raise ValueError(f"gradient file declares {n_rows} rows but contains {len(lines) - 1}")
    rows = []
    for i, ln in enumerate(lines[1:], start=2):
        try:
            vals = [float(x) for x in ln.split()]
        except ValueError:
            raise ValueError(f"line {i}: could not parse reals from {ln!r}") from None
        if len(vals) != dim:
            raise ValueError(f"line {i}: expected {dim} values, got {len(vals)}")
        rows.append(vals)
    return GradientMatrix(np.array(rows, dtype=np.float64))


def read_gradient_matrix(path: str | os.PathLike) -> GradientMatrix:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_gradient_matrix(fh.read())


def write_gradient_matrix(grads: GradientMatrix, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_gradient_matrix(grads))
