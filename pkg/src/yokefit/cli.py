"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 a validate threshold was exceeded.
"""

from __future__ import annotations

import argparse
import sys

from .config import apply_seed_override, default_config, load_config
from .errors import (ConfigError, DivergenceError, GeometryError,
                     IdentificationError, ModelConstructionError,
                     NumericalError, TableError)
from .pipeline import (cmd_build_model, cmd_identify, cmd_make_data,
                       cmd_sensitivity, cmd_validate)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_THRESHOLD = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="yokefit",
        description="Stochastic B(H)-curve modelling and identification of a "
                    "magnet yoke's material curve from flux-density data.")
    parser.add_argument("--config", metavar="PATH",
                        help="run configuration file (defaults apply when omitted)")
    parser.add_argument("--threads", type=int, default=1, metavar="N",
                        help="worker cap for particle evaluations; 1 (default) "
                             "guarantees bit-reproducible runs")
    parser.add_argument("--seed-override", type=int, default=None, metavar="INT",
                        help="re-key all named seeds from one value")
    parser.add_argument("--out", metavar="DIR", default=None,
                        help="output directory (overrides [paths] out_dir)")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("build-model",
                   help="fit the ensemble, solve the KLE eigenproblem, write "
                        "model JSON and the spectrum report")
    sub.add_parser("sensitivity",
                   help="per-mode sensitivity maps and the ranked probe set")
    sub.add_parser("make-data",
                   help="simulate training/validation observations at a "
                        "seeded ground truth")
    sub.add_parser("identify",
                   help="recover the parameter vector by swarm optimization")
    sub.add_parser("validate",
                   help="error metrics of a finished identification against "
                        "the stored ground truth")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else default_config()
        if args.seed_override is not None:
            apply_seed_override(cfg, args.seed_override)
        if args.out is not None:
            cfg.values[("paths", "out_dir")] = args.out
        if args.threads < 1:
            raise ConfigError(f"--threads must be >= 1, got {args.threads}")
    except (ConfigError, TableError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        if args.command == "build-model":
            cmd_build_model(cfg)
        elif args.command == "sensitivity":
            cmd_sensitivity(cfg)
        elif args.command == "make-data":
            cmd_make_data(cfg)
        elif args.command == "identify":
            cmd_identify(cfg, threads=args.threads)
        elif args.command == "validate":
            if not cmd_validate(cfg):
                return EXIT_THRESHOLD
    except (ConfigError, TableError, GeometryError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DivergenceError, NumericalError, IdentificationError,
            ModelConstructionError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        if isinstance(exc, DivergenceError) and exc.history:
            print(f"residual history: {exc.history}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
