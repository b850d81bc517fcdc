import argparse
import logging

import numpy as np

from cibsolver.app import SolverContext
from cibsolver.cli.common import EXIT_CERTIFICATION, EXIT_OK, solver_config
from cibsolver.managers.configmanager import BELIEF_MODES, ConfigError
from cibsolver.managers.dpmanager import DPSolver, EquilibriumBundle
from cibsolver.managers.modelmanager import GameSpec
from cibsolver.managers.stagemanager import StageSolver, build_stage_game

logger = logging.getLogger("CLI")


def register(subparsers, parents) -> None:
    p = subparsers.add_parser("solve", parents=parents, help="backward induction on a model file")
    p.add_argument("--spec", required=True, help="model JSON (absolute, relative, or inside model/)")
    p.add_argument("--grid", type=int, help="simplex grid resolution m")
    p.add_argument("--tree", action="store_true", help="solve on the exact reachable belief tree")
    p.add_argument("--tol", type=float, help="stage BNE tolerance")
    p.add_argument("--symmetric", action="store_true", help="canonicalize cells of symmetric two-agent specs")
    p.add_argument("--belief-mode", choices=BELIEF_MODES, help="grid over (pi, pi_hat) or pi alone")
    p.add_argument("--off-path-aliasing", action="store_true",
                   help="let an aliased grid take off-path beliefs from pi when pi_hat differs")
    p.add_argument("--enumerate", action="store_true", help="list every stage equilibrium found at --cell")
    p.add_argument("--cell", default="1:0", help="T:INDEX of the cell listed by --enumerate")
    p.add_argument("--out", required=True, help="bundle output directory")
    p.set_defaults(handler=run)


def run(args: argparse.Namespace, context: SolverContext) -> int:
    if args.grid is None and not args.tree:
        raise ConfigError(["grid"], "required unless --tree is given")
    spec = context.models.load_spec(args.spec)
    if args.tree and not spec.has_uncontrolled_beliefs():
        raise ConfigError(["tree"], "beliefs of this spec depend on strategies; use --grid")
    cfg = solver_config(args, context, bne_tol=args.tol, belief_mode=args.belief_mode,
                        off_path_aliasing=True if args.off_path_aliasing else None,
                        symmetric_mode=True if args.symmetric else None,
                        enumerate=True if args.enumerate else None)
    solver = DPSolver(cfg)
    bundle = solver.backward_induct_tree(spec) if args.tree else solver.backward_induct(spec, args.grid)
    context.bundles.save(spec, bundle, args.out)
    print(f"solved {spec.name}: worst gap {bundle.worst_gap:.3e}, worst residual {bundle.worst_residual:.3e}, "
          f"{len(bundle.failed_cells())} failed cells -> {args.out}")
    if cfg.enumerate:
        print_equilibria(spec, bundle, solver.stage_solver, args.cell)
    return EXIT_OK if bundle.complete else EXIT_CERTIFICATION


def print_equilibria(spec: GameSpec, bundle: EquilibriumBundle, stage_solver: StageSolver, where: str) -> None:
    t, cell = (int(v) for v in where.split(":"))
    sweep = bundle.stages[t]
    b = sweep.support.state(cell)
    stage = build_stage_game(spec, bundle.continuation(t), sweep.updates[cell], b)
    found = stage_solver.stage_equilibria(stage, stage_solver.config.symmetric_mode)
    print(f"t={t} cell={cell} c={b.c} pi={[p.tolist() for p in b.pi.marginals]}: {len(found)} equilibria "
          f"for the stored update")
    with np.printoptions(precision=6, suppress=True):
        for i, strategy in enumerate(found):
            print(f"  [{i}] " + " | ".join(f"agent {n + 1}: {strategy.probs[n].tolist()}" for n in spec.agents))
