# Copyright 2026 Bidomain Homogenization contributors
# License LGPL-3.0 or later (http://www.gnu.org/licenses/lgpl).
"""Command-line entry point.

Exit codes: 0 success, 2 invalid input, 3 solver failure, 4 I/O failure.
"""

import argparse
import logging
import sys

from .. import __version__
from ..exceptions import SolverError, ValidationError
from . import experiments
from .config import load_config

_logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_SOLVER = 3
EXIT_IO = 4


def build_parser():
    parser = argparse.ArgumentParser(
        prog="bidomain-homogenization",
        description="Effective tensors, micro/macro runs and eps-convergence studies.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument(
        "--log-level",
        default="INFO",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        type=str.upper,
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, metavar="PATH")
    common.add_argument("--out", metavar="DIR", help="overrides [output] directory")
    common.add_argument(
        "--cache",
        metavar="DIR",
        help="tensor cache directory (default $BIDOMAIN_HOMOGENIZATION_CACHE)",
    )
    common.add_argument("--threads", type=int, metavar="N")
    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser("tensors", parents=[common], help="solve cell problems")
    run = commands.add_parser("run", parents=[common], help="integrate one problem")
    run.add_argument("--solver", choices=["micro", "macro"], default="micro")
    commands.add_parser("converge", parents=[common], help="eps-convergence study")
    commands.add_parser("kernel", parents=[common], help="dump the memory kernel")
    return parser


def dispatch(args):
    config = load_config(args.config)
    options = {"out": args.out, "cache": args.cache, "threads": args.threads}
    if args.command == "tensors":
        tensors, path, hit = experiments.cmd_tensors(config, **options)
        print("%s (%s%s)" % (path, tensors.regime, ", cached" if hit else ""))
    elif args.command == "run":
        report = experiments.cmd_run(config, args.solver, **options)
        for name in report.files:
            print(name)
    elif args.command == "converge":
        table = experiments.cmd_converge(config, **options)
        print(" ".join(table.header()))
        for row in table.table_rows():
            print(" ".join(str(cell) for cell in row))
    elif args.command == "kernel":
        for path in experiments.cmd_kernel(config, **options):
            print(path)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        dispatch(args)
    except ValidationError as e:
        _logger.error("%s", e)
        return EXIT_INVALID
    except SolverError as e:
        _logger.error("solver failure: %s", e)
        return EXIT_SOLVER
    except OSError as e:
        _logger.error("I/O failure: %s", e)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
