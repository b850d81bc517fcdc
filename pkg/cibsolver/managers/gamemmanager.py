import itertools
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from cibsolver.managers.beliefmanager import CIBState, signaling_free_step
from cibsolver.managers.configmanager import SolverConfig
from cibsolver.managers.dpmanager import DPSolver, EquilibriumBundle, OffSupportQueryError
from cibsolver.managers.modelmanager import NO_OBSERVATION, GameSpec, freeze, validate_spec
from cibsolver.managers.stagemanager import (
    TIE_TOL,
    Continuation,
    NoFixedPointError,
    StageResult,
    StageSolver,
    StrategySlice,
    UpdateSlice,
    bne_gap,
    build_stage_game,
    cell_seed,
    consistency_residual,
    iterated_best_response,
    own_type_shift_residual,
    reduced_payoffs,
    signaling_free_slice,
)

WAIT = "wait"
DECOMPOSITION_TOL = 1e-10


class GameMStructureError(ValueError):
    """Raised when a spec lacks the uncontrolled-dynamics, no-private-value structure."""
    def __init__(self, violations: List[str]) -> None:
        super().__init__("not a Game M spec: " + "; ".join(violations[:5])
                         + (f" (+{len(violations) - 5} more)" if len(violations) > 5 else ""))
        self.violations = violations


@dataclass(frozen=True, eq=False)
class GameMSpec:
    """
    A GameSpec with the epoch structure that makes beliefs strategy-independent.

    Local states move and observations arrive only at the evolution epochs;
    between epochs local states are frozen and the public state appends the
    joint action. Utilities never depend on the agent's own local state.
    """
    spec: GameSpec
    epochs: Tuple[int, ...]
    sequential: bool = False

    def is_epoch(self, t: int) -> bool:
        return t in self.epochs


# ---------------------------------------------------------------------- #
# Generator
# ---------------------------------------------------------------------- #
def _joint_label(labels: Sequence[str]) -> str:
    return ",".join(labels)


def game_m_generate(seed: int, num_agents: int = 2, horizon: int = 3, num_states: int = 2,
                    num_actions: int = 2, num_observations: int = 2,
                    epochs: Optional[Sequence[int]] = None, sequential: bool = False,
                    zero_utility: bool = False, stochastic_roots: bool = False,
                    name: str = "game-m") -> GameMSpec:
    """
    Seeded random Game M instance.

    ``epochs`` lists the times t < T at which local states evolve (default
    {1}). ``sequential`` lets one agent move per time step, the others only
    wait. ``stochastic_roots`` starts every epoch from one of two public roots
    drawn independently of the actions.
    """
    epochs = (1,) if epochs is None else tuple(sorted(set(int(t) for t in epochs)))
    if any(not 1 <= t < horizon for t in epochs):
        raise ValueError(f"epochs must lie in 1..{horizon - 1}, got {epochs}")
    rng = np.random.default_rng(seed)
    N, T = num_agents, horizon
    xs = tuple(f"s{i}" for i in range(num_states))
    ys = tuple(f"y{i}" for i in range(num_observations))
    roots = ("r0", "r1") if stochastic_roots else ("r0",)

    actions = []
    for n in range(N):
        per_t = []
        for t in range(1, T + 1):
            moves = not sequential or (t - 1) % N == n
            per_t.append(tuple(f"a{i}" for i in range(num_actions)) if moves else (WAIT,))
        actions.append(tuple(per_t))

    public = [roots]
    for t in range(1, T):
        if t in epochs:
            public.append(roots)
        else:
            profiles = itertools.product(*(actions[n][t - 1] for n in range(N)))
            public.append(tuple(f"{c}|{_joint_label(a)}" for c in public[-1] for a in profiles))

    def a_shape(t: int) -> Tuple[int, ...]:
        return tuple(len(actions[n][t - 1]) for n in range(N))

    local_kernel = [[] for _ in range(N)]
    obs_kernel = [[] for _ in range(N)]
    observations = [[] for _ in range(N)]
    public_kernel = []
    for t in range(1, T):
        shape = a_shape(t)
        expand = (slice(None),) + (None,) * N
        for n in range(N):
            if t in epochs:
                move = rng.dirichlet(np.ones(num_states), size=num_states)
                obs = rng.dirichlet(np.ones(num_observations), size=num_states)
                observations[n].append(ys)
            else:
                move = np.eye(num_states)
                obs = np.ones((num_states, 1))
                observations[n].append((NO_OBSERVATION,))
            local_kernel[n].append(np.broadcast_to(move[expand], (num_states,) + shape + (num_states,)).copy())
            obs_kernel[n].append(np.broadcast_to(obs[expand], (num_states,) + shape + (obs.shape[1],)).copy())
        nc, nc2 = len(public[t - 1]), len(public[t])
        kernel = np.zeros((nc,) + shape + (nc2,))
        if t in epochs:
            for c in range(nc):
                kernel[c] = rng.dirichlet(np.ones(nc2)) if stochastic_roots else np.eye(nc2)[0]
        else:
            for c in range(nc):
                for j, a in enumerate(np.ndindex(*shape)):
                    kernel[(c,) + a + (c * int(np.prod(shape)) + j,)] = 1.0
        public_kernel.append(kernel)

    utility = []
    for n in range(N):
        per_t = []
        for t in range(1, T + 1):
            full = (len(public[t - 1]),) + (num_states,) * N + a_shape(t)
            if zero_utility:
                per_t.append(np.zeros(full))
                continue
            own_free = list(full)
            own_free[1 + n] = 1
            per_t.append(np.broadcast_to(rng.uniform(-1.0, 1.0, own_free), full).copy())
        utility.append(tuple(per_t))

    spec = GameSpec(
        name=name,
        horizon=T,
        num_agents=N,
        public_states=tuple(public),
        local_states=tuple(tuple(xs for _ in range(T)) for _ in range(N)),
        actions=tuple(actions),
        observations=tuple(tuple(o) for o in observations),
        admissible=tuple(tuple(np.ones((num_states, len(actions[n][t - 1])), dtype=bool)
                               for t in range(1, T + 1)) for n in range(N)),
        local_kernel=tuple(tuple(k) for k in local_kernel),
        obs_kernel=tuple(tuple(k) for k in obs_kernel),
        public_kernel=tuple(public_kernel),
        utility=tuple(utility),
        initial_local=tuple(rng.dirichlet(np.ones(num_states)) for _ in range(N)),
        initial_public=rng.dirichlet(np.ones(len(roots))) if stochastic_roots else np.ones(1),
    )
    return GameMSpec(freeze(spec), epochs, sequential)


# ---------------------------------------------------------------------- #
# Structure
# ---------------------------------------------------------------------- #
def _frozen_step(spec: GameSpec, t: int) -> bool:
    """True when local states stay put and nothing is observed at t."""
    for n in spec.agents:
        if spec.obs_size(n, t) != 1:
            return False
        kernel = spec.local_kernel[n][t - 1]
        eye = np.eye(kernel.shape[0])[(slice(None),) + (None,) * spec.num_agents]
        if not np.array_equal(kernel, np.broadcast_to(eye, kernel.shape)):
            return False
    return True


def game_m_from_spec(spec: GameSpec) -> GameMSpec:
    """Recover the epoch annotations of a spec read from a model file."""
    epochs = tuple(t for t in range(1, spec.horizon) if not _frozen_step(spec, t))
    sequential = any(1 in spec.action_shape(t) for t in range(1, spec.horizon + 1))
    gm = GameMSpec(spec, epochs, sequential)
    violations = structural_violations(gm)
    if violations:
        raise GameMStructureError(violations)
    return gm


def structural_violations(gm: GameMSpec) -> List[str]:
    spec, out = gm.spec, list(validate_spec(gm.spec))
    if not spec.has_uncontrolled_beliefs():
        out.append("local or observation kernels depend on actions, or action sets depend on the local state")
    for t in range(1, spec.horizon):
        kernel = spec.public_kernel[t - 1]
        flat = kernel.reshape((kernel.shape[0], -1, kernel.shape[-1]))
        if gm.is_epoch(t):
            if not (flat == flat[:, :1]).all():
                out.append(f"t={t}: public transition at an epoch depends on actions")
        else:
            if not _frozen_step(spec, t):
                out.append(f"t={t}: local states move or observations arrive between epochs")
            if not np.isin(kernel, (0.0, 1.0)).all():
                out.append(f"t={t}: public transition between epochs is not deterministic")
    for n in spec.agents:
        for t in range(1, spec.horizon + 1):
            u = spec.utility[n][t - 1]
            if not (u == u.take([0], axis=1 + n)).all():
                out.append(f"utility of agent {n + 1} at t={t} depends on its own local state")
    return out


def action_invariance_violations(spec: GameSpec, bundle: EquilibriumBundle) -> List[Tuple[int, int]]:
    """
    Tree nodes whose signaling-free successor changes with the action profile.

    Successors for a fixed observation profile must be bitwise identical
    across all action profiles.
    """
    out = []
    for t in range(1, spec.horizon):
        support = bundle.support(t)
        for cell, b in enumerate(support.cells()):
            for y in spec.joint_observation_profiles(t):
                seen = None
                for a in spec.joint_action_profiles(t):
                    try:
                        nxt = signaling_free_step(spec, b.pi_hat, y, a)
                    except RuntimeError:
                        nxt = None
                    key = None if nxt is None else tuple(p.tobytes() for p in nxt.marginals)
                    if seen is None:
                        seen = key
                    elif key != seen:
                        out.append((t, cell))
                        break
    return out


# ---------------------------------------------------------------------- #
# Solver
# ---------------------------------------------------------------------- #
@dataclass
class GameMReport:
    pooled_variation: float
    psi_equals_signaling_free: bool
    action_invariance_failures: List[Tuple[int, int]]
    decomposition_residual: float
    methods: Dict[str, int] = field(default_factory=dict)
    nodes: Dict[int, int] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return (self.pooled_variation == 0.0 and self.psi_equals_signaling_free
                and not self.action_invariance_failures
                and self.decomposition_residual <= DECOMPOSITION_TOL)

    def to_text(self) -> str:
        lines = [
            f"nodes per t: {self.nodes}",
            f"stage methods: {self.methods}",
            f"pooled variation: {self.pooled_variation:.3e}",
            f"psi equals signaling-free update: {self.psi_equals_signaling_free}",
            f"action-invariance failures: {len(self.action_invariance_failures)}",
            f"value decomposition residual: {self.decomposition_residual:.3e}",
            f"verdict: {'PASS' if self.passed else 'FAIL'}",
        ]
        return "\n".join(lines)


class GameMSolver:
    """
    Exact solver for Game M.

    Beliefs never depend on strategies here, so every stage uses the
    signaling-free update as psi and a pooled slice that is a Nash equilibrium
    of the reduced complete-information game.
    """

    def __init__(self, config: Optional[SolverConfig] = None) -> None:
        self.config = config or SolverConfig()
        self.stage_solver = StageSolver(self.config)
        self.logger = logging.getLogger("GameM")

    def solve(self, gm: GameMSpec) -> Tuple[EquilibriumBundle, GameMReport]:
        violations = structural_violations(gm)
        if violations:
            raise GameMStructureError(violations)
        bundle = DPSolver(self.config, self.stage_solver).backward_induct_tree(gm.spec, self.solve_stage)
        report = self.report(gm, bundle)
        log = self.logger.info if report.passed else self.logger.error
        log(f"Game M solved: pooled variation {report.pooled_variation:.1e}, "
            f"decomposition residual {report.decomposition_residual:.1e}, methods {report.methods}")
        return bundle, report

    def solve_stage(self, spec: GameSpec, continuation: Optional[Continuation], b: CIBState) -> StageResult:
        t = b.t
        if t == spec.horizon:
            continuation = None
        sf = signaling_free_slice(spec, b) if t < spec.horizon else {}
        update = UpdateSlice(t + 1, dict(sf), sf)
        stage = build_stage_game(spec, continuation, update, b)

        def result(strategy: StrategySlice, method: str) -> StageResult:
            gap = bne_gap(stage, strategy)
            residual = consistency_residual(spec, strategy, b, update) if sf else 0.0
            ok = gap <= self.config.bne_tol and residual <= self.config.consistency_tol
            return StageResult(strategy, update, gap, residual, ok, method)

        uniform = StrategySlice.uniform(spec, t)
        if bne_gap(stage, uniform) <= TIE_TOL:
            return result(uniform, "pooled-uniform")

        shift = own_type_shift_residual(stage)
        if shift > TIE_TOL:
            # the structural check rules this out; reaching it is a bug
            self.logger.error(f"t={t}: stage payoffs depend on own type beyond a shift ({shift:.3e})")
            raise NoFixedPointError(t, result(uniform, "pooled-uniform"))

        found = self.stage_solver.stage_equilibria(stage)
        if found:
            method = "pooled-support-enumeration" if stage.num_agents == 2 else "pooled-best-response"
            return result(found[0], method)

        rng = np.random.default_rng(cell_seed(self.config.seed, t, b))
        sigma = iterated_best_response(reduced_payoffs(stage), rng, self.config.restarts,
                                       self.config.damping, self.config.max_iters, self.config.bne_tol)
        if sigma is not None:
            return result(StrategySlice.pooled(spec, t, sigma), "pooled-best-response")
        self.logger.error(f"t={t}: no equilibrium of the reduced game found")
        raise NoFixedPointError(t, result(uniform, "pooled-uniform"))

    def report(self, gm: GameMSpec, bundle: EquilibriumBundle) -> GameMReport:
        spec = gm.spec
        pooled = 0.0
        same = True
        for sweep in bundle.stages.values():
            for strategy, update in zip(sweep.strategies, sweep.updates):
                pooled = max(pooled, strategy.pooled_variation())
                for key in update.keys():
                    mine, sf = update.beliefs[key], update.signaling_free[key]
                    if any(not np.array_equal(p, q) for p, q in zip(mine.marginals, sf.marginals)):
                        same = False
        return GameMReport(
            pooled_variation=pooled,
            psi_equals_signaling_free=same,
            action_invariance_failures=action_invariance_violations(spec, bundle),
            decomposition_residual=decomposition_residual(gm, bundle),
            methods=dict(Counter(m for s in bundle.stages.values() for m in s.methods)),
            nodes={t: s.support.num_cells for t, s in sorted(bundle.stages.items())},
        )


def next_epoch(gm: GameMSpec, t: int) -> Optional[int]:
    """First evolution epoch at or after t."""
    return next((e for e in gm.epochs if e >= t), None)


def next_epoch_public(gm: GameMSpec, bundle: EquilibriumBundle, t: int, cell: int,
                      memo: Optional[Dict[Tuple[int, int], Optional[np.ndarray]]] = None) -> Optional[np.ndarray]:
    """
    Distribution of the public state right after the next epoch, seen from a tree node.

    Between epochs the public state follows the pooled joint action; at the
    epoch it moves independently of actions. None when no epoch is left.
    """
    memo = {} if memo is None else memo
    if (t, cell) in memo:
        return memo[(t, cell)]
    spec = gm.spec
    e = next_epoch(gm, t)
    sweep = bundle.stages[t]
    b = sweep.support.state(cell)
    if e is None:
        out = None
    elif e == t:
        out = np.array(spec.public_kernel[t - 1][(b.c,) + (0,) * spec.num_agents], dtype=float)
    else:
        strategy, update = sweep.strategies[cell], sweep.updates[cell]
        child_support = bundle.stages[t + 1].support
        out = np.zeros(spec.public_size(e + 1))
        for (y, a), nxt in update.signaling_free.items():
            p = float(np.prod([strategy.probs[k][0, a[k]] for k in spec.agents]))
            if p == 0.0:
                continue
            c2 = int(np.argmax(spec.public_kernel[t - 1][(b.c,) + tuple(a)]))
            child = child_support.exact_cell(CIBState(c2, nxt, nxt))
            if child is None:
                raise OffSupportQueryError(t + 1, CIBState(c2, nxt, nxt))
            out += p * next_epoch_public(gm, bundle, t + 1, child, memo)
    memo[(t, cell)] = out
    return out


def decomposition_residual(gm: GameMSpec, bundle: EquilibriumBundle) -> float:
    """
    Distance of the tabulated values from V(x, b) = U(c, pi_hat) + V~(x, c', pi_hat).

    c' is the public state after the next epoch. The own-type differential
    V(x, b) - V(0, b) must therefore agree across all nodes at t sharing
    pi_hat and the law of c', and must vanish once no epoch is left.
    """
    residual = 0.0
    memo: Dict[Tuple[int, int], Optional[np.ndarray]] = {}
    for t, sweep in sorted(bundle.stages.items()):
        first: Dict[Tuple, np.ndarray] = {}
        for cell, b in enumerate(sweep.support.cells()):
            law = next_epoch_public(gm, bundle, t, cell, memo)
            for n in gm.spec.agents:
                values = np.asarray(sweep.values[n].values[cell], dtype=float)
                diff = values - values[0]
                if law is None:
                    residual = max(residual, float(np.abs(diff).max()))
                    continue
                key = (n, np.round(b.pi_hat.coords(), 12).tobytes(), np.round(law, 12).tobytes())
                ref = first.setdefault(key, diff)
                residual = max(residual, float(np.abs(diff - ref).max()))
    return residual


def game_m_solve(gm: GameMSpec, config: Optional[SolverConfig] = None) -> Tuple[EquilibriumBundle, GameMReport]:
    return GameMSolver(config).solve(gm)
