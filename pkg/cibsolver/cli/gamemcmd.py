import argparse
from pathlib import Path

from cibsolver.app import SolverContext
from cibsolver.cli.common import EXIT_CERTIFICATION, EXIT_OK, parse_ints, solver_config, verify_config
from cibsolver.managers.configmanager import ConfigError
from cibsolver.managers.gamemmanager import GameMSolver, game_m_from_spec, game_m_generate
from cibsolver.managers.verifymanager import Verifier

EXACT_EPS = 1e-8


def register(subparsers, parents) -> None:
    gen = subparsers.add_parser("gen-game-m", parents=parents, help="write a random Game M model file")
    gen.add_argument("--sizes", default="2,3,2,2,2", help="agents,horizon,states,actions,observations")
    gen.add_argument("--epochs", default="1", help="comma-separated evolution times t < T")
    gen.add_argument("--sequential", action="store_true", help="one agent moves per step, the others wait")
    gen.add_argument("--zero-utility", action="store_true")
    gen.add_argument("--stochastic-roots", action="store_true", help="two public roots drawn at every epoch")
    gen.add_argument("--out", required=True, help="model JSON to write")
    gen.set_defaults(handler=run_generate)

    solve = subparsers.add_parser("solve-game-m", parents=parents, help="exact pooled solve of a Game M model")
    solve.add_argument("--spec", required=True)
    solve.add_argument("--verify", action="store_true", help="certify the bundle and write report.txt")
    solve.add_argument("--eps", type=float, default=EXACT_EPS)
    solve.add_argument("--out", required=True)
    solve.set_defaults(handler=run_solve)


def run_generate(args: argparse.Namespace, context: SolverContext) -> int:
    sizes = parse_ints(args.sizes)
    if len(sizes) != 5:
        raise ConfigError(["sizes"], "expected agents,horizon,states,actions,observations")
    n, t, x, a, y = sizes
    gm = game_m_generate(args.seed or 0, num_agents=n, horizon=t, num_states=x, num_actions=a,
                         num_observations=y, epochs=parse_ints(args.epochs), sequential=args.sequential,
                         zero_utility=args.zero_utility, stochastic_roots=args.stochastic_roots)
    context.models.save_spec(gm.spec, args.out)
    print(f"Game M spec (epochs {list(gm.epochs)}) -> {args.out}")
    return EXIT_OK


def run_solve(args: argparse.Namespace, context: SolverContext) -> int:
    gm = game_m_from_spec(context.models.load_spec(args.spec))
    bundle, summary = GameMSolver(solver_config(args, context)).solve(gm)
    out = Path(args.out)
    context.bundles.save(gm.spec, bundle, out / "bundle")
    (out / "game_m_report.txt").write_text(summary.to_text() + "\n", encoding="utf-8")
    print(summary.to_text())

    code = EXIT_OK if bundle.complete and summary.passed else EXIT_CERTIFICATION
    if args.verify:
        report = Verifier(verify_config(args, context, eps_total=args.eps)).verify(gm.spec, bundle)
        (out / "report.txt").write_text(report.to_text(), encoding="utf-8")
        report.write_csv(out / "report.csv")
        print(f"verification {'PASS' if report.passed else 'FAIL'}")
        if not report.passed:
            code = EXIT_CERTIFICATION
    return code
