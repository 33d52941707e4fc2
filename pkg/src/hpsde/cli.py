"""Command-line entry points: run, sweep, oracle, eval.

Exit codes: 0 success, 1 configuration error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import HpsdeConfig, default_config, load_config
from .core import InvalidInputError
from .envs import grid_optimal_expected_return, three_mode_spec, two_mode_spec
from .harness import evaluate_policy_bundle, run_hpsde, write_outputs

log = logging.getLogger(__name__)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hpsde", description="Hierarchical policy search benchmark harness")
    parser.add_argument("--log-level", default="WARNING",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one configuration and write trace files")
    run.add_argument("--config", help="JSON config file (defaults merged underneath)")
    run.add_argument("--env", help="environment name (overrides the config file)")
    run.add_argument("--seed", type=int, help="random seed (overrides the config file)")
    run.add_argument("--out-dir", default="out", help="output directory")
    run.add_argument("--threads", type=int, help="rollout evaluation workers")

    sweep = sub.add_parser("sweep", help="run a seed range and aggregate per iteration")
    sweep.add_argument("--config", help="JSON config file")
    sweep.add_argument("--env", help="environment name")
    sweep.add_argument("--seeds", default="0..20",
                       help="START..END seed range, END exclusive (default 0..20)")
    sweep.add_argument("--out-dir", default="out", help="output directory")
    sweep.add_argument("--threads", type=int, help="rollout evaluation workers")

    oracle = sub.add_parser("oracle", help="print the grid-optimal expected return of a toy surface")
    oracle.add_argument("--env", required=True, help="toy2 or toy3")

    ev = sub.add_parser("eval", help="replay a saved policy bundle on fresh contexts")
    ev.add_argument("--policies", required=True, help="path to policies.json")
    ev.add_argument("--contexts", type=int, default=100)
    ev.add_argument("--seed", type=int, default=0)
    return parser


def _resolve_config(args) -> HpsdeConfig:
    if args.config:
        cfg = load_config(args.config, env=args.env, seed=getattr(args, "seed", None))
    else:
        cfg = default_config(args.env or "toy2")
        if getattr(args, "seed", None) is not None:
            from dataclasses import replace
            cfg = replace(cfg, seed=args.seed)
    if getattr(args, "threads", None) is not None:
        from dataclasses import replace
        cfg = replace(cfg, threads=args.threads)
    return cfg


def _parse_seed_range(text: str):
    try:
        start, end = text.split("..")
        start, end = int(start), int(end)
    except ValueError as e:
        raise InvalidInputError(f"bad seed range {text!r}; expected START..END") from e
    if end <= start:
        raise InvalidInputError("seed range must be non-empty")
    return range(start, end)


def _cmd_run(args) -> int:
    cfg = _resolve_config(args)
    result = run_hpsde(cfg)
    paths = write_outputs(result, args.out_dir)
    final = result.trace.records[-1]
    print(f"env={cfg.env} seed={cfg.seed} final_mean_return={final.mean_return:.4f} "
          f"n_options={final.n_options}")
    for name, p in paths.items():
        print(f"{name}: {p}")
    return 0


def _cmd_sweep(args) -> int:
    from dataclasses import replace

    cfg = _resolve_config(args)
    seeds = _parse_seed_range(args.seeds)
    per_iter: dict[int, dict[str, list[float]]] = {}
    for seed in seeds:
        result = run_hpsde(replace(cfg, seed=seed))
        for rec in result.trace.records:
            slot = per_iter.setdefault(rec.iteration, {"ret": [], "opts": []})
            slot["ret"].append(rec.mean_return)
            slot["opts"].append(rec.n_options)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["iter,mean_return_mean,mean_return_std,n_options_mean,n_options_std,n_seeds"]
    for it in sorted(per_iter):
        r = np.array(per_iter[it]["ret"])
        o = np.array(per_iter[it]["opts"], dtype=np.float64)
        lines.append(f"{it},{r.mean()!r},{r.std()!r},{o.mean()!r},{o.std()!r},{len(r)}")
    path = out / "sweep.csv"
    path.write_text("\n".join(lines) + "\n")
    print(f"sweep over {len(list(seeds))} seeds written to {path}")
    return 0


def _cmd_oracle(args) -> int:
    if args.env == "toy2":
        value = grid_optimal_expected_return(two_mode_spec())
    elif args.env == "toy3":
        value = grid_optimal_expected_return(three_mode_spec())
    else:
        raise InvalidInputError("the grid oracle supports toy2 and toy3 only")
    print(f"{args.env} grid-optimal expected return: {value!r}")
    return 0


def _cmd_eval(args) -> int:
    summary = evaluate_policy_bundle(args.policies, n_contexts=args.contexts, seed=args.seed)
    print(json.dumps(summary, indent=2))
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (0, None) else 1
    logging.basicConfig(level=getattr(logging, args.log_level))
    handlers = {"run": _cmd_run, "sweep": _cmd_sweep, "oracle": _cmd_oracle, "eval": _cmd_eval}
    try:
        return handlers[args.command](args)
    except InvalidInputError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # anything past config validation is a runtime failure
        log.exception("run failed")
        print(f"runtime error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
