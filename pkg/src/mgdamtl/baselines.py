"""Static-weight baselines: uniform scaling, grid search, single-task training.

Static weighting minimises ``sum_t c_t L_t``. Steps follow the same order as
:func:`mgda.mgda_step` (heads first, then the shared block with gradients at
the updated heads), so a frozen ``alpha`` reproduces the MGDA update exactly.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core_types import SimplexWeights
from .mgda import PassCounter, StepReport, task_param_step
from .minnorm import StopReason, simplex_lattice
from .models import Batch, MtlModel, backward_encoder, backward_task_heads, forward


def weighted_step(model: MtlModel, batch: Batch, lr: float, weights,
                  counter: PassCounter | None = None) -> StepReport:
    """One SGD step on ``sum_t c_t L_t``; mutates ``model``."""
    start = time.perf_counter()
    c = weights.alpha if isinstance(weights, SimplexWeights) else np.asarray(weights, dtype=np.float64)
    if c.shape != (model.n_tasks,):
        raise ValueError(f"expected {model.n_tasks} task weights, got shape {c.shape}")
    local = PassCounter()
    fwd = forward(model, batch)
    task_param_step(model, batch, lr, fwd, local, weights=c)
    heads = backward_task_heads(model, batch, fwd)
    local.task += model.n_tasks
    upstream = sum(ct * gz for ct, gz in zip(c, heads.z_grads))
    update = backward_encoder(model, batch, upstream, fwd)
    local.shared += 1
    if not np.all(np.isfinite(update)):
        raise FloatingPointError("non-finite shared update")
    model.params.shared -= lr * update
    if counter is not None:
        counter.shared += local.shared
        counter.task += local.task
    return StepReport(
        losses_before=fwd.losses,
        alpha=SimplexWeights(c) if abs(c.sum() - 1.0) <= 1e-9 else SimplexWeights.uniform(model.n_tasks),
        min_norm_sq=float("nan"),
        stationary=False,
        backward_passes_shared=local.shared,
        backward_passes_task=local.task,
        step_time=time.perf_counter() - start,
        solver_iterations=0,
        solver_stop=StopReason.GAMMA_ZERO,
    )


def uniform_scaling_step(model: MtlModel, batch: Batch, lr: float,
                         counter: PassCounter | None = None) -> StepReport:
    """SGD on ``(1/T) sum_t L_t``."""
    return weighted_step(model, batch, lr, np.full(model.n_tasks, 1.0 / model.n_tasks), counter)


def weight_grid(n_tasks: int = 2, step: float = 0.05) -> list[np.ndarray]:
    """Points of ``{c in [0,1]^T : sum c = 1}`` at spacing ``step``; T=2, 0.05 gives 21."""
    return list(simplex_lattice(n_tasks, step))


@dataclass
class GridCell:
    weights: np.ndarray
    metrics: dict
    result: object = None


@dataclass
class GridResult:
    cells: list[GridCell] = field(default_factory=list)
    best_index: int = -1

    @property
    def best(self) -> GridCell:
        return self.cells[self.best_index]


def grid_search(weights_grid: Sequence[np.ndarray], train_fn: Callable[[np.ndarray], tuple[dict, object]],
                select: Callable[[dict], float] | str = "mean_acc") -> GridResult:
    """Train one model per weight vector and keep every cell.

    ``train_fn(weights)`` returns ``(metrics, result)``; it is called in grid
    order, so seeded training functions give reproducible sweeps. The best
    cell maximises ``select(metrics)``; a string selects that metrics key.
    Ties keep the earliest cell.
    """
    score = (lambda m: float(m[select])) if isinstance(select, str) else select
    out = GridResult()
    best = -np.inf
    for w in weights_grid:
        metrics, result = train_fn(np.asarray(w, dtype=np.float64))
        out.cells.append(GridCell(np.asarray(w, dtype=np.float64), metrics, result))
        s = score(metrics)
        if s > best:
            best, out.best_index = s, len(out.cells) - 1
    if out.best_index < 0 and out.cells:
        out.best_index = 0
    return out


def single_task_model(model_or_spec, task: int, seed: int) -> MtlModel:
    """Fresh one-head model for ``task`` with the same seeded initial weights
    the multi-task model would give that head and the encoder."""
    encoder, heads = model_or_spec
    return MtlModel.init(encoder, [heads[task]], seed, head_keys=[task])


def single_task_train(task: int, model_spec, batches: Callable[[], Sequence[Batch]], lr: float, seed: int,
                      evaluate: Callable[[MtlModel], dict] | None = None,
                      counter: PassCounter | None = None) -> tuple[MtlModel, dict, list[StepReport]]:
    """Train a dedicated model on one task with plain SGD.

    ``batches()`` yields full multi-task batches in training order; only the
    labels of ``task`` are used.
    """
    model = single_task_model(model_spec, task, seed)
    reports = []
    for batch in batches():
        reports.append(uniform_scaling_step(model, batch.select_tasks([task]), lr, counter))
    metrics = evaluate(model) if evaluate is not None else {}
    return model, metrics, reports
