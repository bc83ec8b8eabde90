"""Command-line entry point.

Usage:
  bilat collect|train|run|report|all --config PATH --out DIR
        [--jobs N] [--filter scheme=..,k=..,height=..,mode=..]
        [--seed N] [--resume]

Exit codes: 0 success, 2 configuration/validation error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import RunFilter, load_config
from .errors import BilatError, ConfigError
from . import pipeline


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bilat", description="Bilateral-teleoperation imitation learning pipeline")
    parser.add_argument("stage", choices=["collect", "train", "run", "report", "all"])
    parser.add_argument("--config", type=str, default=None, help="config file (defaults used when omitted)")
    parser.add_argument("--out", type=str, default="out", help="output directory")
    parser.add_argument("--jobs", type=int, default=1, help="parallel worker count")
    parser.add_argument("--filter", type=str, default=None, help="cell filter, e.g. scheme=S2SM,k=5,height=45,mode=fb")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--resume", action="store_true", help="skip training jobs with existing checkpoints")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        overrides = {"seed": str(args.seed)} if args.seed is not None else None
        cfg = load_config(args.config, overrides)
        filt = RunFilter.parse(args.filter)
        out = Path(args.out)
        if args.stage == "collect":
            pipeline.cmd_collect(cfg, out, args.jobs)
        elif args.stage == "train":
            pipeline.cmd_train(cfg, out, args.jobs, resume=args.resume, filt=filt)
        elif args.stage == "run":
            pipeline.cmd_run(cfg, out, args.jobs, filt=filt)
        elif args.stage == "report":
            pipeline.cmd_report(cfg, out, filt=filt)
        else:
            pipeline.cmd_all(cfg, out, args.jobs, resume=args.resume, filt=filt)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except BilatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
