"""Command-line entry point.

    mgdamtl solve GRADIENT_FILE
    mgdamtl train --config CFG [--seed N] [--out DIR] [--method NAME] [--max-steps N]
    mgdamtl grid  --config CFG [--seed N] [--out DIR] [--max-steps N]
    mgdamtl verify [--seed N] [--out DIR] [--property NAME ...] [--replay FILE]
    mgdamtl profile RUN_DIR_OR_JSON ... --out FILE

Exit status is 0 on success, 1 on a failed run or check, 2 on usage errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from ..core_types import read_gradient_matrix
from ..minnorm import SolverConfig, frank_wolfe_min_norm, is_pareto_stationary
from .config import METHODS, ConfigError, ExperimentConfig


def _fmt(x: float) -> str:
    return f"{x:.9g}"


def cmd_solve(args) -> int:
    grads = read_gradient_matrix(args.gradients)
    cfg = SolverConfig() if args.config is None else ExperimentConfig.load(args.config).solver
    sol = frank_wolfe_min_norm(grads.gram(), cfg)
    alpha = ", ".join(_fmt(a) for a in sol.alpha)
    stationary = "true" if is_pareto_stationary(sol, cfg) else "false"
    print(f"alpha = [{alpha}] squared_norm = {_fmt(sol.squared_norm)} iterations = {sol.iterations} "
          f"stationary = {stationary}")
    return 0


def _load_config(args, method: str | None = None) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if method or getattr(args, "method", None):
        changes["method"] = method or args.method
    if args.max_steps is not None:
        changes["max_steps"] = args.max_steps
    if args.out is not None:
        changes["output_dir"] = args.out
    return cfg.replace(**changes) if changes else cfg


def cmd_train(args, method: str | None = None) -> int:
    from .runner import run_experiment

    cfg = _load_config(args, method)
    res = run_experiment(cfg)
    for rec in res.records:
        final = rec.epochs[-1] if rec.epochs else {}
        losses = " ".join(f"{k}={_fmt(v)}" for k, v in final.items() if k.startswith("test_loss"))
        print(f"{rec.label}: steps={len(rec.steps)} passes_shared={rec.passes_shared} {losses}")
    if cfg.method == "grid":
        print(f"best cell: {res.records[res.best_index].label}")
    print(f"wrote {res.run_dir}")
    return 0


def cmd_verify(args) -> int:
    from . import verify

    if args.replay:
        ok, detail = verify.replay(args.replay)
        print(f"{'PASS' if ok else 'FAIL'} replay {args.replay}: {detail}")
        return 0 if ok else 1
    seed = 0 if args.seed is None else args.seed
    report = verify.run_suite(seed, names=args.property or None, dump_dir=args.out)
    for r in report.results:
        tag = "PASS" if r.passed else ("FAIL" if r.expected_to_hold else "REFUTED")
        line = f"{tag:7s} {r.name}: {r.detail}"
        if r.counterexample_file:
            line += f" [counterexample: {r.counterexample_file}]"
        print(line)
    if args.out:
        path = Path(args.out) / "verify_report.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print("all properties hold" if report.ok else "some properties FAILED")
    return 0 if report.ok else 1


def cmd_profile(args) -> int:
    from .profile import emit_profile, load_summary

    files = []
    for p in map(Path, args.runs):
        if not p.exists():
            raise FileNotFoundError(f"no such run directory or file: {p}")
        files.extend(sorted(p.rglob("run.json")) if p.is_dir() else [p])
    if not files:
        raise FileNotFoundError("no run.json found under the given paths")
    rows = emit_profile([load_summary(f) for f in files], args.out)
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mgdamtl", description="Min-norm multi-task gradient descent tools.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="min-norm weights for a gradient file")
    p.add_argument("gradients", help="text file: 'T d' header, then T rows of d numbers")
    p.add_argument("--config", help="experiment config whose solver settings to use")
    p.set_defaults(func=cmd_solve)

    def run_flags(p, with_method: bool):
        p.add_argument("--config", help="experiment config (JSON)")
        p.add_argument("--seed", type=int, help="override the root seed")
        p.add_argument("--out", help="output directory")
        if with_method:
            p.add_argument("--method", choices=METHODS, help="override the method")
        p.add_argument("--max-steps", type=int, dest="max_steps", help="cap optimisation steps per model")

    p = sub.add_parser("train", help="run one experiment config")
    run_flags(p, True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("grid", help="static-weight grid sweep")
    run_flags(p, False)
    p.set_defaults(func=lambda a: cmd_train(a, "grid"))

    p = sub.add_parser("verify", help="run the property suites")
    p.add_argument("--seed", type=int, help="suite seed (default 0)")
    p.add_argument("--out", help="directory for the JSON report and counterexample dumps")
    p.add_argument("--property", action="append", help="run only this property (repeatable)")
    p.add_argument("--replay", help="rerun a counterexample file")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("profile", help="merge run summaries into a profile CSV")
    p.add_argument("runs", nargs="+", help="run directories (searched recursively) or run.json files")
    p.add_argument("--out", required=True, help="CSV file to write")
    p.set_defaults(func=cmd_profile)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: bad config: {exc}", file=sys.stderr)
    except FileNotFoundError as exc:
        name = exc.filename if exc.filename else str(exc)
        print(f"error: file not found: {name}", file=sys.stderr)
    except (ValueError, KeyError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
