"""MultiMNIST comparison: MGDA-UB, uniform scaling, single-task and the 21-cell grid.

    python3 scripts/run_multimnist.py --out runs/multimnist [--mnist-dir DIR] [--epochs 10] [--seed 0]

Writes one run directory per method and ``profile.csv`` with one row per
trained model (24 rows for two tasks).
"""

import argparse
import time
from pathlib import Path

from mgdamtl.harness.config import ExperimentConfig
from mgdamtl.harness.profile import emit_profile
from mgdamtl.harness.runner import run_experiment

METHODS = ("mgda_ub", "uniform", "single_task", "grid")


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", default=str(Path(__file__).resolve().parent.parent / "configs" / "multimnist.json"))
    p.add_argument("--out", default="runs/multimnist")
    p.add_argument("--mnist-dir", default=None, help="directory with the four MNIST IDX files")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    args = p.parse_args()

    cfg = ExperimentConfig.load(args.config)
    if args.mnist_dir is not None:
        cfg = cfg.replace(dataset=type(cfg.dataset)(**{**cfg.to_dict()["dataset"], "mnist_dir": args.mnist_dir}))
    if args.epochs is not None:
        cfg = cfg.replace(epochs=args.epochs)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)

    records = []
    cpu = time.process_time()
    for method in METHODS:
        res = run_experiment(cfg.replace(method=method), args.out)
        records += res.records
        print(f"{method}: {len(res.records)} model(s) -> {res.run_dir}")
    out = Path(args.out) / "profile.csv"
    emit_profile(records, out)
    print(f"wrote {out} ({len(records)} rows), {(time.process_time() - cpu) / 60:.1f} CPU-min")
    for rec in records:
        f = rec.epochs[-1]
        print(f"  {rec.label:24s} test acc {f['test_acc_0']:.4f} / {f['test_acc_1']:.4f}")


if __name__ == "__main__":
    main()
