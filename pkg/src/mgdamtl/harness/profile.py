"""Pareto-profile CSV: one row per run, fixed column order.

Columns, for ``T`` tasks:

====================  =========================================================
``run``               run label (method, or ``grid[c_0;...;c_T-1]`` for a cell)
``method``            mgda, mgda_ub, uniform, single_task or grid
``weights``           static weights of a grid cell, ``;``-separated; else empty
``config_hash``       hash of the experiment config
``seed``              root seed
``n_tasks``           T
``{split}_loss_{t}``  final loss of task t, for split in train, val, test
``{split}_acc_{t}``   final accuracy of task t (nan for regression heads)
``alpha_mean_{t}``    mean of alpha_t over all training steps
``alpha_std_{t}``     population standard deviation of alpha_t over steps
``steps``             number of optimisation steps
``passes_shared``     backward passes through the shared encoder
``passes_task``       per-task backward passes through the heads
``wall_time``         seconds, including evaluation
====================  =========================================================

Missing values (a split that does not exist, alpha for single-task runs) are
written as ``nan``. Loss/accuracy columns are grouped by split, then task,
then loss before accuracy.
"""

from __future__ import annotations

import json
from pathlib import Path

from .runner import SPLITS, RunRecord, write_csv


def profile_columns(n_tasks: int) -> list[str]:
    metrics = [f"{split}_{m}_{t}" for split in SPLITS for t in range(n_tasks) for m in ("loss", "acc")]
    alpha = [f"alpha_{s}_{t}" for t in range(n_tasks) for s in ("mean", "std")]
    return (["run", "method", "weights", "config_hash", "seed", "n_tasks"] + metrics + alpha
            + ["steps", "passes_shared", "passes_task", "wall_time"])


def _nan(x):
    return float("nan") if x is None else x


def profile_row(summary: dict) -> list:
    final = summary.get("final") or {}
    metric_keys = [k for k in final if k not in ("epoch", "step")]
    if not metric_keys:
        raise ValueError(f"run {summary.get('label', '?')} ({summary.get('config_hash', '?')}) "
                         "has no evaluation metrics")
    T = summary["n_tasks"]
    cols = profile_columns(T)
    row = [summary["label"], summary["method"], summary["weights"], summary["config_hash"], summary["seed"], T]
    for c in cols[6: 6 + 6 * T]:
        row.append(_nan(final.get(c)))
    for t in range(T):
        row += [_nan(summary["alpha_mean"][t]), _nan(summary["alpha_std"][t])]
    row += [summary["steps"], summary["passes_shared"], summary["passes_task"], summary["wall_time"]]
    return row


def load_summary(path) -> dict:
    """Summary dict from a ``run.json`` file."""
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)["summary"]


def emit_profile(records, path) -> list[list]:
    """Write the profile CSV for ``records`` (RunRecords or run summaries) in the given order."""
    records = list(records)
    if not records:
        raise ValueError("profile needs at least one run")
    summaries = [r.summary() if isinstance(r, RunRecord) else r for r in records]
    n = {s["n_tasks"] for s in summaries}
    if len(n) != 1:
        raise ValueError(f"cannot merge runs with different task counts {sorted(n)}")
    rows = [profile_row(s) for s in summaries]
    write_csv(Path(path), profile_columns(n.pop()), rows)
    return rows
