"""One multi-task training step with min-norm gradient weighting.

Order of operations inside :func:`mgda_step`:

1. gradient descent on every task head with its own task gradient;
2. per-task gradients over the shared coordinate space, recomputed with
   the updated heads (shared parameters for ``FULL_MGDA``, the batch
   representation ``Z`` for ``MGDA_UB``);
3. Frank-Wolfe on their Gram matrix for the weights ``alpha``;
4. shared update ``theta_sh -= lr * sum_t alpha_t grad_sh L_t``, skipped when
   the min-norm value certifies Pareto stationarity.

In ``MGDA_UB`` mode step 4 is one encoder backward pass of the combined
representation gradient ``sum_t alpha_t dL_t/dZ``.
"""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .core_types import GradientMatrix, LossVector, SimplexWeights
from .minnorm import MinNormSolution, SolverConfig, StopReason, frank_wolfe_min_norm, is_pareto_stationary
from .models import Batch, ForwardResult, HeadGradients, MtlModel, backward_encoder, backward_task_heads, forward

CERT_RTOL = 1e-6
ACTIVE_ALPHA = 1e-6


class GradientMode(enum.Enum):
    FULL_MGDA = "mgda"
    MGDA_UB = "mgda_ub"


@dataclass
class PassCounter:
    """Running count of backward passes.

    ``shared`` counts passes through the encoder, ``task`` counts per-task
    passes through a head.
    """

    shared: int = 0
    task: int = 0


@dataclass(frozen=True)
class StepReport:
    losses_before: LossVector
    alpha: SimplexWeights
    min_norm_sq: float
    stationary: bool
    backward_passes_shared: int
    backward_passes_task: int
    step_time: float
    solver_iterations: int = 0
    solver_stop: StopReason = StopReason.GAMMA_ZERO
    # min_t d.g_t in the space alpha was solved in, and its tolerance
    certificate_min: float = 0.0
    certificate_tol: float = 0.0

    @property
    def certificate_ok(self) -> bool:
        return self.certificate_min >= -self.certificate_tol


class Certificate(NamedTuple):
    products: np.ndarray   # d . g_t for every task
    tolerance: float       # 1e-6 * max_t |g_t|^2
    nonnegative: bool
    complementary: bool    # active tasks share one value (within tolerance)


def descent_certificate(alpha, grads: GradientMatrix) -> Certificate:
    """Descent certificate for ``d = sum_t alpha_t g_t``.

    At a min-norm solution every ``d.g_t`` is at least ``|d|^2 >= 0`` and the
    tasks with positive weight share the same value. Failures are reported in
    the returned flags, never raised: an unconverged ``alpha`` can fail.
    """
    a = alpha.alpha if isinstance(alpha, SimplexWeights) else np.asarray(alpha, dtype=np.float64)
    d = grads.combine(a)
    products = grads.data @ d
    scale = float(np.max(np.einsum("ij,ij->i", grads.data, grads.data)))
    tol = CERT_RTOL * scale
    active = products[a > ACTIVE_ALPHA]
    spread = float(active.max() - active.min()) if active.size else 0.0
    return Certificate(products, tol, bool(products.min() >= -tol), spread <= tol)


def _certificate_from_gram(alpha: np.ndarray, m: np.ndarray) -> tuple[float, float]:
    # (M alpha)_t = d . g_t
    return float((m @ alpha).min()), CERT_RTOL * float(np.max(np.diag(m)))


def _check_finite(arrays, what: str):
    for t, a in enumerate(arrays):
        if not np.all(np.isfinite(a)):
            raise FloatingPointError(f"non-finite {what} for task {t}")


def task_param_step(model: MtlModel, batch: Batch, learning_rate: float,
                    fwd: ForwardResult | None = None, counter: PassCounter | None = None,
                    weights=None) -> HeadGradients:
    """``theta_t -= lr * w_t * grad_{theta_t} L_t`` for every task; shared block untouched.

    ``weights`` defaults to one per task. All gradients are computed before
    any block is written, and the update is abandoned if any is non-finite.
    """
    if learning_rate <= 0:
        raise ValueError(f"learning rate must be positive, got {learning_rate}")
    fwd = forward(model, batch) if fwd is None else fwd
    grads = backward_task_heads(model, batch, fwd)
    _check_finite(grads.param_grads, "task-parameter gradient")
    if counter is not None:
        counter.task += model.n_tasks
    w = np.ones(model.n_tasks) if weights is None else np.asarray(weights, dtype=np.float64)
    for t, g in enumerate(grads.param_grads):
        if w[t] != 0.0:
            model.params.task_blocks[t] -= learning_rate * (w[t] * g)
    return grads


class TaskGradients(NamedTuple):
    matrix: GradientMatrix
    z_grads: list[np.ndarray]


def compute_task_gradients(model: MtlModel, batch: Batch, mode: GradientMode,
                           fwd: ForwardResult | None = None, counter: PassCounter | None = None) -> TaskGradients:
    """Per-task gradients over the coordinate space the weights are solved in.

    ``FULL_MGDA``: row ``t`` is ``grad_{theta_sh} L_t``, one encoder backward
    per task. ``MGDA_UB``: row ``t`` is ``dL_t/dZ`` flattened example-major;
    no encoder backward.
    """
    fwd = forward(model, batch) if fwd is None else fwd
    heads = backward_task_heads(model, batch, fwd)
    _check_finite(heads.z_grads, "representation gradient")
    if counter is not None:
        counter.task += model.n_tasks
    if mode is GradientMode.MGDA_UB:
        return TaskGradients(GradientMatrix.from_rows(heads.z_grads), heads.z_grads)
    rows = []
    for gz in heads.z_grads:
        rows.append(backward_encoder(model, batch, gz, fwd))
        if counter is not None:
            counter.shared += 1
    _check_finite(rows, "shared-parameter gradient")
    return TaskGradients(GradientMatrix(np.stack(rows)), heads.z_grads)


def _row_scales(grads: GradientMatrix, losses: LossVector, normalize: str) -> np.ndarray:
    if normalize == "none":
        return np.ones(grads.rows)
    if normalize == "l2":
        norms = np.linalg.norm(grads.data, axis=1)
        return np.where(norms > 0, 1.0 / np.where(norms > 0, norms, 1.0), 1.0)
    if normalize == "loss":
        v = losses.values
        return np.where(v > 0, 1.0 / np.where(v > 0, v, 1.0), 1.0)
    raise ValueError(f"unknown normalisation {normalize!r}")


def mgda_step(model: MtlModel, batch: Batch, mode: GradientMode, learning_rate: float,
              solver_config: SolverConfig = SolverConfig(), normalize: str = "none",
              counter: PassCounter | None = None) -> StepReport:
    """One training step; mutates ``model`` in place.

    With ``normalize`` other than ``"none"`` each task gradient is rescaled
    (by its L2 norm or by its loss) before the solve and the rescaled
    gradients are combined, so the applied direction is the certified one.
    """
    start = time.perf_counter()
    local = PassCounter()
    fwd = forward(model, batch)
    losses_before = fwd.losses
    task_param_step(model, batch, learning_rate, fwd, local)
    tg = compute_task_gradients(model, batch, mode, fwd, local)
    scales = _row_scales(tg.matrix, losses_before, normalize)
    solve_grads = tg.matrix if normalize == "none" else GradientMatrix(tg.matrix.data * scales[:, None])
    gram = solve_grads.gram()
    sol: MinNormSolution = frank_wolfe_min_norm(gram, solver_config)
    alpha = sol.weights.alpha
    cert_min, cert_tol = _certificate_from_gram(alpha, gram.m)
    stationary = is_pareto_stationary(sol, solver_config)
    if not stationary:
        coeffs = alpha * scales
        if mode is GradientMode.FULL_MGDA:
            update = coeffs @ tg.matrix.data
        else:
            upstream = sum(c * gz for c, gz in zip(coeffs, tg.z_grads))
            update = backward_encoder(model, batch, upstream, fwd)
            local.shared += 1
        if not np.all(np.isfinite(update)):
            raise FloatingPointError("non-finite shared update")
        model.params.shared -= learning_rate * update
    if counter is not None:
        counter.shared += local.shared
        counter.task += local.task
    return StepReport(
        losses_before=losses_before,
        alpha=sol.weights,
        min_norm_sq=sol.squared_norm,
        stationary=stationary,
        backward_passes_shared=local.shared,
        backward_passes_task=local.task,
        step_time=time.perf_counter() - start,
        solver_iterations=sol.iterations,
        solver_stop=sol.converged_by,
        certificate_min=cert_min,
        certificate_tol=cert_tol,
    )


class SharedStep(NamedTuple):
    theta: np.ndarray
    solution: MinNormSolution
    direction: np.ndarray
    stationary: bool


def shared_only_step(theta, grads: GradientMatrix, learning_rate: float,
                     solver_config: SolverConfig = SolverConfig()) -> SharedStep:
    """The shared update for problems with no task-specific parameters.

    ``grads`` holds the per-task gradients at ``theta``; the returned
    ``theta`` is ``theta - lr * sum_t alpha_t g_t``, or ``theta`` unchanged
    when the min-norm value certifies stationarity.
    """
    theta = np.asarray(theta, dtype=np.float64)
    sol = frank_wolfe_min_norm(grads.gram(), solver_config)
    d = grads.combine(sol.weights)
    stationary = is_pareto_stationary(sol, solver_config)
    new = theta.copy() if stationary else theta - learning_rate * d
    return SharedStep(new, sol, d, stationary)


def halving_schedule(base_lr: float, epoch: int, halve_every: int | None) -> float:
    """Constant rate, or halved every ``halve_every`` epochs (epochs count from 0)."""
    if not halve_every:
        return base_lr
    return base_lr * 0.5 ** (epoch // halve_every)
