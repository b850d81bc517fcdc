import argparse
from pathlib import Path

from cibsolver.app import SolverContext
from cibsolver.cli.common import EXIT_CERTIFICATION, EXIT_OK, solver_config, verify_config
from cibsolver.managers.dpmanager import DPSolver
from cibsolver.managers.macmanager import (
    MacParams,
    mac_spec,
    write_closed_form_comparison,
    write_mac_surfaces,
)
from cibsolver.managers.verifymanager import Verifier


def register(subparsers, parents) -> None:
    p = subparsers.add_parser("mac", parents=parents, help="solve the two-user collision channel")
    p.add_argument("--p", type=float, default=0.5, help="packet arrival probability")
    p.add_argument("--c", type=float, default=2.0, help="dropping cost")
    p.add_argument("--T", type=int, default=2, help="horizon")
    p.add_argument("--grid", type=int, default=20, help="grid resolution per queue belief")
    p.add_argument("--verify", action="store_true", help="certify the bundle and write report.txt")
    p.add_argument("--eps", type=float, help="total deviation gap tolerance for --verify")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=run)


def run(args: argparse.Namespace, context: SolverContext) -> int:
    params = MacParams(p=args.p, c=args.c, horizon=args.T)
    spec = mac_spec(params)
    cfg = solver_config(args, context, belief_mode="aliased", off_path_aliasing=True, symmetric_mode=True)
    bundle = DPSolver(cfg).backward_induct(spec, args.grid)

    out = Path(args.out)
    context.models.save_spec(spec, out / "mac.json")
    context.bundles.save(spec, bundle, out / "bundle")
    write_mac_surfaces(bundle, out)
    _, beta_err, value_err = write_closed_form_comparison(bundle, params, out)
    print(f"mac p={params.p} c={params.c} T={params.horizon} (c*={params.c_star:.6f}): "
          f"{len(bundle.failed_cells())} failed cells, last-stage beta error {beta_err:.3e}, "
          f"value error {value_err:.3e} -> {out}")

    code = EXIT_OK if bundle.complete else EXIT_CERTIFICATION
    if args.verify:
        report = Verifier(verify_config(args, context, eps_total=args.eps)).verify(spec, bundle)
        (out / "report.txt").write_text(report.to_text(), encoding="utf-8")
        report.write_csv(out / "report.csv")
        print(f"verification {'PASS' if report.passed else 'FAIL'}")
        if not report.passed:
            code = EXIT_CERTIFICATION
    return code
