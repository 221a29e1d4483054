"""Command line entry point.

    parasource forward --config experiment.cfg [--out DIR] [--seed N] [--quiet]
    parasource invert  --config experiment.cfg [--out DIR] [--solver NAME] ...
    parasource table   --config experiment.cfg ...
    parasource sweep   --config experiment.cfg ...

`forward` manufactures and stores an observation, `invert` identifies the
source from a stored observation, `table` runs the gamma table, `sweep`
re-runs the experiment along one parameter axis. Exit codes: 0 on success,
2 for an invalid configuration, 3 when a solver breaks down.
"""

import argparse
import sys

from .errors import (ConfigError, DegenerateOperatorError, InvalidArgumentError,
                     SolverFailureError)
from .harness import (SOLVERS, ExperimentConfig, run_identification,
                      run_quasi_real, run_sweep, run_table)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="parasource",
        description="Identify spacewise source profiles of a 2D parabolic "
                    "problem from final-time or time-integral observations.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
            ("forward", "generate and store an observation"),
            ("invert", "recover the source from a stored observation"),
            ("table", "error tables over a list of source steepness values"),
            ("sweep", "re-run the experiment along one parameter axis")):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", required=True, help="experiment configuration file")
        cmd.add_argument("--out", default=None, help="output directory override")
        cmd.add_argument("--solver", default=None, choices=SOLVERS,
                         help="identification method override")
        cmd.add_argument("--seed", default=None, type=int, help="noise seed override")
        cmd.add_argument("--quiet", action="store_true", help="suppress progress output")
    return parser


def _load_config(args) -> ExperimentConfig:
    config = ExperimentConfig.from_file(args.config)
    updates = {}
    if args.out is not None:
        updates["out"] = args.out
    if args.solver is not None:
        updates["solver"] = args.solver
    if args.seed is not None:
        if not 0 <= args.seed < 2 ** 64:
            raise ConfigError(f"seed must fit in 64 unsigned bits, got {args.seed}")
        updates["seed"] = args.seed
    return config.with_updates(**updates) if updates else config


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        config = _load_config(args)
        if args.command == "forward":
            run_quasi_real(config, quiet=args.quiet)
        elif args.command == "invert":
            run_identification(config, quiet=args.quiet)
        elif args.command == "table":
            run_table(config, quiet=args.quiet)
        else:
            run_sweep(config, quiet=args.quiet)
    except (ConfigError, InvalidArgumentError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverFailureError, DegenerateOperatorError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
