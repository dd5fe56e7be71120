"""Competing-task comparison over several seeds.

    python3 scripts/run_competing.py [--seeds 5] [--epochs 1500] [--methods mgda_ub,mgda]

Prints the final training losses of uniform scaling, single-task training
and each listed method, and whether uniform scaling dominates the method.
"""

import argparse
from pathlib import Path

import numpy as np

from mgdamtl.core_types import LossVector
from mgdamtl.harness.config import ExperimentConfig
from mgdamtl.harness.runner import run_experiment


def final_losses(cfg):
    f = run_experiment(cfg, write=False).records[0].epochs[-1]
    return np.array([f["train_loss_0"], f["train_loss_1"]])


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", default=str(Path(__file__).resolve().parent.parent / "configs" / "competing.json"))
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--methods", default="mgda_ub")
    args = p.parse_args()
    cfg = ExperimentConfig.load(args.config)
    if args.epochs is not None:
        cfg = cfg.replace(epochs=args.epochs)
    for seed in range(args.seeds):
        c = cfg.replace(seed=seed)
        u = final_losses(c.replace(method="uniform"))
        s = final_losses(c.replace(method="single_task"))
        parts = [f"seed {seed}: single {np.round(s, 4)} uniform {np.round(u, 4)}"]
        for m in args.methods.split(","):
            v = final_losses(c.replace(method=m))
            parts.append(f"{m} {np.round(v, 4)} dominated={LossVector(u).dominates(LossVector(v))}")
        print("  ".join(parts))


if __name__ == "__main__":
    main()
