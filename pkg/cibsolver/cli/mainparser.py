import argparse
import logging
from typing import Optional, Sequence

from cibsolver.app import SolverContext
from cibsolver.cli import gamemcmd, maccmd, oraclecmd, solvecmd, verifycmd
from cibsolver.cli.common import EXIT_BUDGET, EXIT_CERTIFICATION, EXIT_VALIDATION, common_options
from cibsolver.managers.beliefmanager import EnumerationBudgetError, ImpossibleConditioningError
from cibsolver.managers.bundlemanager import BundleMismatchError
from cibsolver.managers.configmanager import ConfigError
from cibsolver.managers.dpmanager import AliasingError, GridBudgetError
from cibsolver.managers.gamemmanager import GameMStructureError
from cibsolver.managers.modelmanager import SpecParseError, SpecValidationError
from cibsolver.managers.verifymanager import ReachableFailedCellError

logger = logging.getLogger("CLI")

COMMANDS = (solvecmd, verifycmd, maccmd, gamemcmd, oraclecmd)

VALIDATION_ERRORS = (SpecParseError, SpecValidationError, ConfigError, GameMStructureError,
                     BundleMismatchError, ImpossibleConditioningError, AliasingError, FileNotFoundError)
BUDGET_ERRORS = (GridBudgetError, EnumerationBudgetError)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cibsolver",
        description="Common-information-based PBE solver and certifier for dynamic games "
                    "with asymmetric information.")
    subparsers = parser.add_subparsers(dest="command", required=True)
    parents = [common_options()]
    for command in COMMANDS:
        command.register(subparsers, parents)
    return parser


def _set_level(args: argparse.Namespace) -> None:
    if args.verbose:
        logging.getLogger().setLevel(logging.DEBUG)
    elif args.quiet:
        logging.getLogger().setLevel(logging.WARNING)


def run(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    _set_level(args)

    context = SolverContext(config_path=args.config)
    if context.init_error:
        logger.error(f"Startup failed: {context.init_error}")
        return EXIT_VALIDATION
    try:
        return args.handler(args, context)
    except SpecValidationError as e:
        for line in e.diagnostics:
            logger.error(line)
        return EXIT_VALIDATION
    except VALIDATION_ERRORS as e:
        logger.error(str(e))
        return EXIT_VALIDATION
    except BUDGET_ERRORS as e:
        logger.error(f"Budget exceeded: {e}")
        return EXIT_BUDGET
    except ReachableFailedCellError as e:
        logger.error(str(e))
        return EXIT_CERTIFICATION
    finally:
        context.close()
