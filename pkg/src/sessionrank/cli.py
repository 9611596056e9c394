"""Command line entry point: ``sessionrank <stage> --config cfg.json``."""
from __future__ import annotations

import argparse
import logging
import sys
from typing import Optional, Sequence

from .config import ConfigError, PipelineConfig
from .evaluation import format_run
from .initial_ranker import initial_rank
from .pipeline import ORDER, Pipeline, PipelineError, Workspace

# aliases that run one stage with a few parameters overridden from flags
ALIASES = {
    "train-positions": "positions",
    "match-positions": "match",
    "train-relatedness": "relatedness",
}


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sessionrank", description="Session search re-ranking pipeline.")
    p.add_argument("stage", nargs="?", choices=list(ORDER) + ["run-all", "rank-initial"] + list(ALIASES))
    p.add_argument("--config", help="JSON config file (defaults apply to missing keys)")
    p.add_argument("--print-config", action="store_true", help="print the effective config and exit")
    p.add_argument("--output-dir", help="override paths.output_dir")
    p.add_argument("--force", action="store_true", help="ignore cached stage outputs")
    p.add_argument("-v", "--verbose", action="store_true")
    # stage-specific overrides
    p.add_argument("--alpha", type=float, help="rank-initial: interpolation weight")
    p.add_argument("--k", type=int, help="rank-initial: depth; train-positions: number of topics")
    p.add_argument("--iters", type=int, help="train-positions: Gibbs sweeps")
    p.add_argument("--seed", type=int, help="stage seed override")
    p.add_argument("--top", type=int, help="match-positions: positions kept per session")
    p.add_argument("--r", type=float, help="train-relatedness: AROW regularizer")
    p.add_argument("--epochs", type=int, help="train-relatedness: passes over the pairs")
    return p


def _overrides(args) -> dict:
    o: dict = {}
    if args.output_dir:
        o["paths"] = {"output_dir": args.output_dir}
    if args.stage == "rank-initial":
        o["initial_ranker"] = {k: v for k, v in (("alpha", args.alpha), ("k", args.k)) if v is not None}
    elif args.stage == "train-positions":
        o["positions"] = {k: v for k, v in (("k", args.k), ("iters", args.iters), ("seed", args.seed)) if v is not None}
    elif args.stage == "match-positions":
        o["matching"] = {"top": args.top} if args.top is not None else {}
    elif args.stage == "train-relatedness":
        o["relatedness"] = {k: v for k, v in (("r", args.r), ("epochs", args.epochs), ("seed", args.seed)) if v is not None}
    return o


def _deep_update(base: dict, extra: dict) -> dict:
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(base.get(k), dict):
            _deep_update(base[k], v)
        else:
            base[k] = v
    return base


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        base = PipelineConfig.load(args.config) if args.config else PipelineConfig()
        cfg = PipelineConfig(_deep_update(base.data, _overrides(args)), base.base_dir)
    except (ConfigError, OSError, TypeError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.print_config:
        print(cfg.to_json())
        return 0
    if args.stage is None:
        print("a stage is required (or --print-config)", file=sys.stderr)
        return 2
    pipe = Pipeline(cfg)
    try:
        if args.stage == "rank-initial":
            ws: Workspace = pipe.ws
            ir = cfg["initial_ranker"]
            runs = {
                s.id: initial_rank(s, ws.index, ws.candidates, ir["alpha"], ir["k"], ws.mu, exclude=ws.stopwords)
                for s in ws.sessions
            }
            sys.stdout.write(format_run(runs, f"initial-a{ir['alpha']:g}"))
            return 0
        stages = ORDER if args.stage == "run-all" else [ALIASES.get(args.stage, args.stage)]
        for name in stages:
            res = pipe.run_stage(name, force=args.force)
            status = "cached" if res.cached else f"{res.seconds:.1f}s"
            print(f"{name:<12} {status:>8}  {len(res.outputs)} file(s)")
        if args.stage in ("run-all", "compare"):
            print()
            print(pipe.ws.read("reports/comparison.txt"), end="")
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
