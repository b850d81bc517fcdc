import argparse
from pathlib import Path

from cibsolver.app import SolverContext
from cibsolver.cli.common import EXIT_CERTIFICATION, EXIT_OK, verify_config
from cibsolver.managers.verifymanager import Verifier


def register(subparsers, parents) -> None:
    p = subparsers.add_parser("verify", parents=parents, help="certify a saved bundle")
    p.add_argument("--spec", required=True)
    p.add_argument("--bundle", required=True, help="bundle directory written by solve")
    p.add_argument("--eps", type=float, help="total deviation gap tolerance")
    p.add_argument("--samples", type=int, help="Monte-Carlo rollouts per checked value")
    p.add_argument("--out", required=True, help="report text file; per-cell CSV is written next to it")
    p.set_defaults(handler=run)


def run(args: argparse.Namespace, context: SolverContext) -> int:
    spec = context.models.load_spec(args.spec)
    bundle = context.bundles.load(spec, args.bundle)
    report = Verifier(verify_config(args, context, eps_total=args.eps,
                                    simulation_samples=args.samples)).verify(spec, bundle)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report.to_text(), encoding="utf-8")
    report.write_csv(out.with_suffix(".csv"))
    print(f"verification {'PASS' if report.passed else 'FAIL'} -> {out}")
    return EXIT_OK if report.passed else EXIT_CERTIFICATION
