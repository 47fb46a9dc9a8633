"""Command line entry point: ``homogch <subcommand> --config <path> --out <dir>``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, PipelineConfig, load_config
from .io import DependencyError
from .pipeline import STAGES, StageError, run_pipeline

EXIT_CONFIG = 2
EXIT_DEPENDENCY = 3
EXIT_STAGE = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="homogch",
        description="Cell problems, effective tensors and upscaled Cahn-Hilliard runs.")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "cell": "build the reference cell and solve the corrector problems",
        "stokes": "solve the periodic Stokes problem on the stored cell",
        "tensors": "assemble the effective tensors and write the tensor report",
        "macro": "integrate the macroscopic equation with the tensor report",
        "pipeline": "run cell, stokes, tensors and macro in order",
        "defaults": "print the default configuration",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        if name != "defaults":
            p.add_argument("--config", type=Path, default=None,
                           help="configuration file (defaults are used when omitted)")
            p.add_argument("--out", type=Path, required=True, help="output directory")
        p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "defaults":
        print(PipelineConfig().to_text(), end="")
        return 0
    try:
        cfg = load_config(args.config) if args.config is not None else PipelineConfig()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    args.out.mkdir(parents=True, exist_ok=True)
    try:
        if args.command == "pipeline":
            run_pipeline(cfg, args.out)
        else:
            STAGES[args.command](cfg, args.out)
    except DependencyError as exc:
        print(f"dependency error: {exc}", file=sys.stderr)
        return EXIT_DEPENDENCY
    except StageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_STAGE
    return 0


if __name__ == "__main__":
    sys.exit(main())
