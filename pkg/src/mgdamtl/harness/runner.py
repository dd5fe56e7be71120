"""Run one experiment config end to end and write its telemetry.

Output layout for ``train`` (``<run>`` is ``<method>-<config_hash>-s<seed>``)::

    <out>/<run>/steps.csv    one row per optimisation step
    <out>/<run>/epochs.csv   one row per evaluation (end of every epoch)
    <out>/<run>/run.json     config echo and the run summary used by profiles

A grid sweep writes one such directory per cell under ``<out>/<run>/`` plus
``grid.csv`` (the profile of all cells) and ``best.json``.

Every file is written to a temporary name and renamed into place, so an
interrupted run never leaves a partial CSV behind.
"""

from __future__ import annotations

import csv
import functools
import io
import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from ..baselines import single_task_model, uniform_scaling_step, weight_grid, weighted_step
from ..core_types import STREAM_SHUFFLE, rng_stream
from ..data import (MultiTaskDataset, digits_as_mnist, load_mnist_dir, multimnist_splits,
                    synth_competing_tasks, synth_mtl_regression)
from ..mgda import GradientMode, StepReport, halving_schedule, mgda_step
from ..models import Batch, EncoderSpec, HeadSpec, LossKind, MtlModel, forward
from .config import ExperimentConfig

SPLITS = ("train", "val", "test")


def format_value(x) -> str:
    """CSV cell text: floats with 9 significant digits, booleans as true/false."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.9g}"
    return str(x)


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_csv(path, header: list[str], rows: list[list]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([format_value(v) for v in r])
    atomic_write_text(path, buf.getvalue())


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


# ---------------------------------------------------------------- problems

@functools.lru_cache(maxsize=4)
def _dataset_cached(dataset_json: str, seed: int) -> MultiTaskDataset:
    d = json.loads(dataset_json)
    kind = d["kind"]
    if kind == "regression":
        ds, _ = synth_mtl_regression(d["n_tasks"], d["d_in"], d["d_repr"], d["noise"], seed, d["n_samples"],
                                     d["hidden"], d["val_fraction"], d["test_fraction"])
        return ds
    if kind == "competing":
        return synth_competing_tasks(seed, d["n_samples"], d["angle_deg"], d["noise"], d["val_fraction"],
                                     d["test_fraction"])
    if d["mnist_dir"]:
        source = load_mnist_dir(d["mnist_dir"])
    else:
        source = digits_as_mnist(seed)
    return multimnist_splits(*source, seed=seed, n_train=d["n_train"], n_test=d["n_test"],
                             val_fraction=d["val_fraction"], shift=d["shift"], combine=d["combine"])


def build_dataset(cfg: ExperimentConfig) -> MultiTaskDataset:
    return _dataset_cached(json.dumps(cfg.to_dict()["dataset"], sort_keys=True), cfg.seed)


def model_spec(cfg: ExperimentConfig, dataset: MultiTaskDataset) -> tuple[EncoderSpec, list[HeadSpec]]:
    d_in = int(np.prod(dataset.inputs.shape[1:]))
    m = cfg.model
    enc = EncoderSpec(m.encoder, d_in, m.d_repr, m.hidden, m.activation)
    if cfg.dataset.kind == "multimnist":
        heads = [HeadSpec(10, LossKind.SOFTMAX_CE)] * dataset.n_tasks
    else:
        heads = [HeadSpec(1, LossKind.MSE)] * dataset.n_tasks
    return enc, heads


def epoch_batches(dataset: MultiTaskDataset, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    """Index arrays for one epoch: a fresh permutation of the training split,
    cut into consecutive batches (the last one may be short)."""
    idx = dataset.indices("train")
    if batch_size == 0 or batch_size >= idx.size:
        return [idx]
    perm = idx[rng_stream(seed, STREAM_SHUFFLE, epoch).permutation(idx.size)]
    return [perm[i: i + batch_size] for i in range(0, perm.size, batch_size)]


def evaluate(model: MtlModel, dataset: MultiTaskDataset, tasks: list[int]) -> dict:
    """Loss and accuracy (nan for regression heads) per split and task."""
    out = {}
    for split in SPLITS:
        idx = dataset.indices(split)
        if idx.size == 0:
            continue
        b = dataset.batch(idx).select_tasks(tasks)
        fwd = forward(model, b)
        for j, t in enumerate(tasks):
            out[f"{split}_loss_{t}"] = float(fwd.losses.values[j])
            if model.heads[j].loss is LossKind.SOFTMAX_CE:
                acc = float(np.mean(np.argmax(fwd.outputs[j], axis=1) == b.labels[j]))
            else:
                acc = float("nan")
            out[f"{split}_acc_{t}"] = acc
    return out


# ----------------------------------------------------------------- records

@dataclass
class StepRow:
    step: int
    epoch: int
    member: int
    lr: float
    report: StepReport
    losses: np.ndarray   # length T, nan for tasks the member does not train
    alpha: np.ndarray    # length T, nan where undefined


@dataclass
class RunRecord:
    config: ExperimentConfig
    label: str
    weights: str
    n_tasks: int
    steps: list[StepRow] = field(default_factory=list)
    epochs: list[dict] = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def method(self) -> str:
        return self.config.method

    @property
    def passes_shared(self) -> int:
        return sum(r.report.backward_passes_shared for r in self.steps)

    @property
    def passes_task(self) -> int:
        return sum(r.report.backward_passes_task for r in self.steps)

    def step_header(self) -> list[str]:
        t = range(self.n_tasks)
        return (["step", "epoch", "member", "config_hash", "seed", "lr"] + [f"loss_{i}" for i in t]
                + [f"alpha_{i}" for i in t]
                + ["min_norm_sq", "stationary", "passes_shared", "passes_task", "solver_iterations",
                   "solver_stop", "certificate_min", "certificate_tol", "step_time"])

    def step_rows(self) -> list[list]:
        h, s = self.config.config_hash(), self.config.seed
        rows = []
        for r in self.steps:
            rep = r.report
            rows.append([r.step, r.epoch, r.member, h, s, r.lr, *r.losses, *r.alpha, rep.min_norm_sq,
                         rep.stationary, rep.backward_passes_shared, rep.backward_passes_task,
                         rep.solver_iterations, rep.solver_stop.value, rep.certificate_min, rep.certificate_tol,
                         rep.step_time])
        return rows

    def epoch_header(self) -> list[str]:
        cols = [f"{split}_{m}_{t}" for split in SPLITS for t in range(self.n_tasks) for m in ("loss", "acc")]
        return ["epoch", "step", "config_hash", "seed"] + cols

    def epoch_rows(self) -> list[list]:
        hdr = self.epoch_header()
        h, s = self.config.config_hash(), self.config.seed
        return [[e["epoch"], e["step"], h, s] + [e.get(c, float("nan")) for c in hdr[4:]] for e in self.epochs]

    def alpha_stats(self) -> tuple[np.ndarray, np.ndarray]:
        if not self.steps:
            nan = np.full(self.n_tasks, np.nan)
            return nan, nan
        a = np.array([r.alpha for r in self.steps])
        with np.errstate(invalid="ignore"):
            return a.mean(axis=0), a.std(axis=0)

    def summary(self) -> dict:
        mean, std = self.alpha_stats()
        return {
            "label": self.label,
            "method": self.method,
            "weights": self.weights,
            "config_hash": self.config.config_hash(),
            "seed": self.config.seed,
            "n_tasks": self.n_tasks,
            "final": dict(self.epochs[-1]) if self.epochs else {},
            "alpha_mean": [float(x) for x in mean],
            "alpha_std": [float(x) for x in std],
            "steps": len(self.steps),
            "passes_shared": self.passes_shared,
            "passes_task": self.passes_task,
            "wall_time": self.wall_time,
        }

    def write(self, run_dir) -> Path:
        run_dir = Path(run_dir)
        write_csv(run_dir / "steps.csv", self.step_header(), self.step_rows())
        write_csv(run_dir / "epochs.csv", self.epoch_header(), self.epoch_rows())
        doc = {"config": self.config.to_dict(), "config_hash": self.config.config_hash(),
               "seed": self.config.seed, "summary": _jsonable(self.summary())}
        atomic_write_text(run_dir / "run.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")
        return run_dir


def _jsonable(x):
    # NaN is not valid JSON; store it as null
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, list):
        return [_jsonable(v) for v in x]
    if isinstance(x, float) and not np.isfinite(x):
        return None
    return x


# ---------------------------------------------------------------- training

StepFn = Callable[[MtlModel, Batch, float], StepReport]


def _train(model: MtlModel, dataset: MultiTaskDataset, cfg: ExperimentConfig, step_fn: StepFn,
           tasks: list[int], record: RunRecord, member: int, alpha_fn) -> list[dict]:
    """Train ``model`` on ``tasks``; append step rows to ``record`` and return
    the evaluation after every epoch."""
    T = record.n_tasks
    evals, step = [], 0
    for epoch in range(cfg.epochs):
        lr = halving_schedule(cfg.learning_rate, epoch, cfg.halve_every)
        done = False
        for idx in epoch_batches(dataset, cfg.batch_size, cfg.seed, epoch):
            rep = step_fn(model, dataset.batch(idx).select_tasks(tasks), lr)
            losses = np.full(T, np.nan)
            losses[tasks] = rep.losses_before.values
            record.steps.append(StepRow(step, epoch, member, lr, rep, losses, alpha_fn(rep)))
            step += 1
            if cfg.max_steps and step >= cfg.max_steps:
                done = True
                break
        evals.append(dict(epoch=epoch, step=step, **evaluate(model, dataset, tasks)))
        if done:
            break
    return evals


def _solver_step(mode: GradientMode, cfg: ExperimentConfig) -> StepFn:
    return lambda m, b, lr: mgda_step(m, b, mode, lr, cfg.solver, cfg.normalize)


def run_single(cfg: ExperimentConfig, weights=None, label: str | None = None) -> RunRecord:
    """Train one model (or one dedicated model per task for ``single_task``)."""
    start = time.perf_counter()
    dataset = build_dataset(cfg)
    spec = model_spec(cfg, dataset)
    T = dataset.n_tasks
    all_tasks = list(range(T))
    method = cfg.method
    weights_label = ""
    if weights is not None:
        weights = np.asarray(weights, dtype=np.float64)
        weights_label = ";".join(f"{w:.4g}" for w in weights)
    record = RunRecord(cfg, label or method, weights_label, T)
    if method == "single_task":
        members = all_tasks if cfg.task < 0 else [cfg.task]
        if any(t >= T for t in members):
            raise ValueError(f"task {cfg.task} out of range for {T} tasks")
        per_member = []
        for t in members:
            model = single_task_model(spec, t, cfg.seed)
            per_member.append(_train(model, dataset, cfg, uniform_scaling_step, [t], record, t,
                                     lambda rep: np.full(T, np.nan)))
        for e in range(max(len(ev) for ev in per_member)):
            row = {"epoch": e, "step": max(ev[min(e, len(ev) - 1)]["step"] for ev in per_member)}
            for ev in per_member:
                row.update({k: v for k, v in ev[min(e, len(ev) - 1)].items() if k not in ("epoch", "step")})
            record.epochs.append(row)
    else:
        model = MtlModel.init(*spec, cfg.seed)
        if method in ("mgda", "mgda_ub"):
            mode = GradientMode.FULL_MGDA if method == "mgda" else GradientMode.MGDA_UB
            step_fn = _solver_step(mode, cfg)
        elif weights is not None:
            c = weights
            step_fn = lambda m, b, lr: weighted_step(m, b, lr, c)  # noqa: E731
        else:
            step_fn = uniform_scaling_step
        record.epochs = _train(model, dataset, cfg, step_fn, all_tasks, record, 0,
                               lambda rep: np.array(rep.alpha.alpha, dtype=np.float64))
    record.wall_time = time.perf_counter() - start
    return record


def run_dir_name(cfg: ExperimentConfig) -> str:
    return f"{cfg.method}-{cfg.config_hash()}-s{cfg.seed}"


def selection_score(cfg: ExperimentConfig, record: RunRecord) -> float:
    final = record.epochs[-1]
    T = record.n_tasks
    select = cfg.select
    if select == "auto":
        select = "mean_val_acc" if cfg.dataset.kind == "multimnist" else "neg_mean_val_loss"
    split = "val" if f"val_loss_0" in final else "train"
    if select == "mean_val_acc":
        return float(np.mean([final[f"{split}_acc_{t}"] for t in range(T)]))
    return -float(np.mean([final[f"{split}_loss_{t}"] for t in range(T)]))


@dataclass
class ExperimentResult:
    records: list[RunRecord]
    run_dir: Path | None
    best_index: int = 0


def run_experiment(cfg: ExperimentConfig, out_dir=None, write: bool = True) -> ExperimentResult:
    """Run ``cfg`` and (by default) write its outputs under ``out_dir``."""
    from ..baselines import grid_search
    from .profile import emit_profile

    root = Path(out_dir if out_dir is not None else cfg.output_dir) / run_dir_name(cfg)
    if cfg.method != "grid":
        rec = run_single(cfg)
        if write:
            rec.write(root)
        return ExperimentResult([rec], root if write else None)

    n_tasks = build_dataset(cfg).n_tasks
    grid = weight_grid(n_tasks, cfg.grid_step)

    def train_cell(c):
        rec = run_single(cfg, weights=c, label="grid[" + ";".join(f"{w:.4g}" for w in c) + "]")
        return {"score": selection_score(cfg, rec)}, rec

    res = grid_search(grid, train_cell, select="score")
    records = [cell.result for cell in res.cells]
    if write:
        for i, rec in enumerate(records):
            rec.write(root / f"cell_{i:03d}")
        emit_profile(records, root / "grid.csv")
        best = {"best_index": res.best_index, "weights": [float(w) for w in res.best.weights],
                "score": res.best.metrics["score"], "config_hash": cfg.config_hash(), "seed": cfg.seed}
        atomic_write_text(root / "best.json", json.dumps(best, indent=2, sort_keys=True) + "\n")
    return ExperimentResult(records, root if write else None, res.best_index)
