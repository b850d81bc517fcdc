import argparse
from dataclasses import replace
from typing import Any, List, Tuple

from cibsolver.app import SolverContext
from cibsolver.managers.configmanager import SolverConfig, VerifyConfig

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_CERTIFICATION = 2
EXIT_BUDGET = 3


def common_options() -> argparse.ArgumentParser:
    """Flags shared by every subcommand."""
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--config", help="solver configuration JSON (default: model/solver_config.json)")
    parent.add_argument("--workers", type=int, help="worker threads for per-cell work")
    parent.add_argument("--seed", type=int, help="seed for restarts, sampling and rollouts")
    level = parent.add_mutually_exclusive_group()
    level.add_argument("--verbose", action="store_true", help="log solver paths per cell")
    level.add_argument("--quiet", action="store_true", help="log warnings and errors only")
    return parent


def solver_config(args: argparse.Namespace, context: SolverContext, **values: Any) -> SolverConfig:
    return context.config.override(workers=args.workers, seed=args.seed, **values)


def verify_config(args: argparse.Namespace, context: SolverContext, **values: Any) -> VerifyConfig:
    given = {"workers": args.workers, "seed": args.seed, **values}
    return replace(context.config.verify, **{k: v for k, v in given.items() if v is not None})


def parse_profiles(text: str) -> List[Tuple[int, ...]]:
    """'0,1;1,0' -> [(0, 1), (1, 0)]; an empty string is an empty history."""
    if not text.strip():
        return []
    return [tuple(int(i) for i in step.split(",")) for step in text.split(";")]


def parse_ints(text: str) -> Tuple[int, ...]:
    return tuple(int(i) for i in text.split(",") if i.strip())
