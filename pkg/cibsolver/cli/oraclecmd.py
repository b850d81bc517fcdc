import argparse

import numpy as np

from cibsolver.app import SolverContext
from cibsolver.cli.common import EXIT_OK, parse_ints, parse_profiles
from cibsolver.managers.beliefmanager import joint_bayes_oracle
from cibsolver.managers.configmanager import ConfigError
from cibsolver.managers.verifymanager import BundleProfile, CommonHistory, construct_full_belief


def register(subparsers, parents) -> None:
    p = subparsers.add_parser("oracle", parents=parents, help="brute-force beliefs along one common history")
    p.add_argument("--spec", required=True)
    p.add_argument("--actions", default="", help="joint action indices per step, e.g. '0,1;1,1'")
    p.add_argument("--observations", default="", help="joint observation indices per step")
    p.add_argument("--publics", default="", help="public state indices c_1,c_2,... (default all 0)")
    p.add_argument("--own", help="condition on agent N's trajectory, e.g. '1:0,1,1'")
    p.add_argument("--bundle", help="also build the full belief system of this bundle")
    p.set_defaults(handler=run)


def run(args: argparse.Namespace, context: SolverContext) -> int:
    spec = context.models.load_spec(args.spec)
    actions, observations = parse_profiles(args.actions), parse_profiles(args.observations)
    if len(actions) != len(observations):
        raise ConfigError(["actions", "observations"], "must have the same number of steps")
    own = None
    if args.own:
        agent, traj = args.own.split(":")
        own = (int(agent) - 1, parse_ints(traj))

    dist = joint_bayes_oracle(spec, actions, observations, own)
    with np.printoptions(precision=8, suppress=True):
        print(f"signaling-free posterior over x_1..x_{dist.t}:")
        for s in range(1, dist.t + 1):
            for k in spec.agents:
                print(f"  t={s} agent {k + 1}: {dist.marginal(s, k)}")

        if args.bundle:
            publics = parse_ints(args.publics) if args.publics else (0,) * dist.t
            if len(publics) != dist.t:
                raise ConfigError(["publics"], f"expected {dist.t} public states")
            history = CommonHistory(publics[0])
            for y, a, c2 in zip(observations, actions, publics[1:]):
                history = history.extend(y, a, c2)
            bundle = context.bundles.load(spec, args.bundle)
            full = construct_full_belief(spec, BundleProfile(spec, bundle), history,
                                         context.config.verify.trajectory_budget)
            print(f"full belief along {history}:")
            for k in spec.agents:
                print(f"  agent {k + 1}: mu_t marginal {full.mu[k].reshape(-1, full.mu[k].shape[-1]).sum(axis=0)}"
                      f", pi_t {full.states[-1].pi[k]}, zero branch used: {full.zero_branch[k]}")
            print(f"  marginal residual {full.marginal_residual:.3e}")
    return EXIT_OK
