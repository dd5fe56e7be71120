"""Backward-pass counts and step time of MGDA against MGDA-UB.

    python3 scripts/run_timing.py [--config configs/timing_t10.json] [--steps 100]
"""

import argparse
from pathlib import Path

from mgdamtl.harness.config import ExperimentConfig
from mgdamtl.harness.runner import run_experiment


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", default=str(Path(__file__).resolve().parent.parent / "configs" / "timing_t10.json"))
    p.add_argument("--steps", type=int, default=None)
    args = p.parse_args()
    cfg = ExperimentConfig.load(args.config)
    if args.steps is not None:
        cfg = cfg.replace(max_steps=args.steps)
    for method in ("mgda", "mgda_ub"):
        rec = run_experiment(cfg.replace(method=method), write=False).records[0]
        t = sum(r.report.step_time for r in rec.steps)
        print(f"{method:8s} steps {len(rec.steps)}  shared passes {rec.passes_shared}  "
              f"task passes {rec.passes_task}  step time {t:.3f} s")


if __name__ == "__main__":
    main()
