import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import comb

from cibsolver.managers.beliefmanager import BeliefVector, CIBState, initial_state
from cibsolver.managers.configmanager import SolverConfig
from cibsolver.managers.modelmanager import GameSpec, spec_fingerprint
from cibsolver.managers.stagemanager import (
    Continuation,
    NoFixedPointError,
    StageResult,
    StageSolver,
    StrategySlice,
    UpdateSlice,
    ZeroContinuation,
    build_stage_game,
    signaling_free_slice,
    type_values,
)

SNAP_TOL = 1e-9

StageSolve = Callable[[GameSpec, Optional[Continuation], CIBState], StageResult]


class GridBudgetError(RuntimeError):
    """Raised when a belief support would exceed the configured cell budget."""
    def __init__(self, t: int, count: int, budget: int) -> None:
        super().__init__(f"belief support at t={t} has {count} cells, budget is {budget}")
        self.t = t
        self.count = count
        self.budget = budget


class AliasingError(RuntimeError):
    """Raised when an aliased grid drops a pi_hat that differs from pi on some cell."""
    def __init__(self, t: int, divergence: float) -> None:
        super().__init__(f"aliased belief grid at t={t}: consistent and signaling-free updates differ by "
                         f"{divergence:.3e}; use belief_mode \"full\" or set off_path_aliasing")
        self.t = t
        self.divergence = divergence


class OffSupportQueryError(RuntimeError):
    """Raised when an exact (tree) support is queried at a belief it does not hold."""
    def __init__(self, t: int, b: CIBState) -> None:
        super().__init__(f"belief at t={t} is not a node of the reachable tree: "
                         f"c={b.c}, pi={b.pi}, pi_hat={b.pi_hat}")
        self.t = t
        self.b = b


# ---------------------------------------------------------------------- #
# Simplex grids
# ---------------------------------------------------------------------- #
def simplex_count(k: int, m: int) -> int:
    return int(comb(m + k - 1, k - 1, exact=True))


def simplex_points(k: int, m: int) -> np.ndarray:
    """Integer count vectors summing to m over k coordinates, lexicographic."""
    out = []
    for bars in itertools.combinations(range(m + k - 1), k - 1):
        edges = (-1,) + bars + (m + k - 1,)
        out.append([edges[i + 1] - edges[i] - 1 for i in range(k)])
    return np.array(out, dtype=int).reshape(-1, k)


def simplex_weights(p: np.ndarray, m: int, index: Dict[Tuple[int, ...], int]) -> List[Tuple[int, float]]:
    """
    Freudenthal interpolation weights of p on the resolution-m simplex grid.

    Works in cumulative coordinates z_i = m * sum_{j >= i} p_j, where the
    grid is the integer lattice and each cell is split into simplices by
    sorting the fractional parts.
    """
    k = len(p)
    if k == 1:
        return [(0, 1.0)]
    z = m * np.cumsum(p[::-1])[::-1]
    z[0] = m
    near = np.rint(z)
    z = np.where(np.abs(z - near) <= SNAP_TOL, near, z)
    base = np.floor(z)
    frac = z - base
    order = np.argsort(-frac[1:], kind="stable") + 1

    weights = [1.0 - frac[order[0]]]
    weights += [frac[order[j - 1]] - frac[order[j]] for j in range(1, k - 1)]
    weights.append(frac[order[-1]])

    out = []
    vertex = base.copy()
    for j, w in enumerate(weights):
        if j > 0:
            vertex[order[j - 1]] += 1.0
        if w <= 0.0:
            continue
        counts = np.append(vertex[:-1] - vertex[1:], vertex[-1])
        out.append((index[tuple(int(c) for c in counts)], float(w)))
    return out


@dataclass(frozen=True, eq=False)
class BeliefGrid:
    """
    Uniform grid over b_t = (c, pi, pi_hat).

    One simplex factor per belief coordinate (pi^1..pi^N, then pi_hat^1..pi_hat^N
    in "full" mode; pi^1..pi^N in "aliased" mode where pi_hat = pi), crossed
    with the public states. Cell ids are c * prod(P) + ravel(factor ids).
    """
    t: int
    m: int
    mode: str
    num_agents: int
    num_public: int
    points: Tuple[np.ndarray, ...]
    index: Tuple[Dict[Tuple[int, ...], int], ...]

    kind = "grid"

    @property
    def factor_shape(self) -> Tuple[int, ...]:
        return tuple(len(p) for p in self.points)

    @property
    def num_cells(self) -> int:
        return self.num_public * int(np.prod(self.factor_shape))

    def _split(self, cell: int) -> Tuple[int, Tuple[int, ...]]:
        per_c = int(np.prod(self.factor_shape))
        c, rest = divmod(cell, per_c)
        return c, tuple(int(i) for i in np.unravel_index(rest, self.factor_shape))

    def _join(self, c: int, ids: Sequence[int]) -> int:
        return c * int(np.prod(self.factor_shape)) + int(np.ravel_multi_index(tuple(ids), self.factor_shape))

    def state(self, cell: int) -> CIBState:
        c, ids = self._split(cell)
        coords = [self.points[f][i] / self.m for f, i in enumerate(ids)]
        N = self.num_agents
        pi = BeliefVector.of(self.t, coords[:N])
        pi_hat = pi if self.mode == "aliased" else BeliefVector.of(self.t, coords[N:])
        return CIBState(c, pi, pi_hat)

    def cells(self) -> Iterator[CIBState]:
        for cell in range(self.num_cells):
            yield self.state(cell)

    def _factors(self, b: CIBState) -> List[np.ndarray]:
        out = list(b.pi.marginals)
        if self.mode == "full":
            out += list(b.pi_hat.marginals)
        return out

    def weights(self, b: CIBState) -> List[Tuple[int, float]]:
        if b.t != self.t:
            raise ValueError(f"belief at t={b.t} queried on the t={self.t} grid")
        per_factor = [simplex_weights(p, self.m, idx) for p, idx in zip(self._factors(b), self.index)]
        out = []
        for combo in itertools.product(*per_factor):
            w = 1.0
            for _, wf in combo:
                w *= wf
            out.append((self._join(b.c, [i for i, _ in combo]), w))
        return out

    def nearest(self, b: CIBState) -> int:
        per_factor = [simplex_weights(p, self.m, idx) for p, idx in zip(self._factors(b), self.index)]
        return self._join(b.c, [max(ws, key=lambda iw: iw[1])[0] for ws in per_factor])

    def locate(self, b: CIBState, interpolation: str = "multilinear") -> List[Tuple[int, float]]:
        if interpolation == "nearest":
            return [(self.nearest(b), 1.0)]
        return self.weights(b)

    def exact_cell(self, b: CIBState) -> Optional[int]:
        """Cell whose state equals b exactly, pi_hat included."""
        cell = self.nearest(b)
        if np.array_equal(self.state(cell).coords(), b.coords()):
            return cell
        return None

    def describe(self) -> Dict:
        return {"kind": self.kind, "m": self.m, "mode": self.mode}


def make_belief_grid(spec: GameSpec, t: int, m: int, mode: str = "full",
                     budget: Optional[int] = None) -> BeliefGrid:
    if m < 1:
        raise ValueError(f"grid resolution must be >= 1, got {m}")
    sizes = list(spec.local_shape(t))
    if mode == "full":
        sizes = sizes + sizes
    elif mode != "aliased":
        raise ValueError(f"unknown belief mode: {mode}")
    count = spec.public_size(t)
    for k in sizes:
        count *= simplex_count(k, m)
    if budget is not None and count > budget:
        raise GridBudgetError(t, count, budget)

    cache: Dict[int, Tuple[np.ndarray, Dict]] = {}
    for k in set(sizes):
        pts = simplex_points(k, m)
        cache[k] = (pts, {tuple(int(c) for c in row): i for i, row in enumerate(pts)})
    return BeliefGrid(t, m, mode, spec.num_agents, spec.public_size(t),
                      tuple(cache[k][0] for k in sizes), tuple(cache[k][1] for k in sizes))


# ---------------------------------------------------------------------- #
# Reachable tree
# ---------------------------------------------------------------------- #
def belief_key(b: CIBState) -> Tuple[int, bytes, bytes]:
    return b.c, b.pi.coords().tobytes(), b.pi_hat.coords().tobytes()


class BeliefTree:
    """Exact support: the beliefs enumerated at one time step."""

    kind = "tree"

    def __init__(self, t: int, states: Sequence[CIBState]) -> None:
        self.t = t
        self.states = list(states)
        self.index = {belief_key(b): i for i, b in enumerate(self.states)}

    @property
    def num_cells(self) -> int:
        return len(self.states)

    def state(self, cell: int) -> CIBState:
        return self.states[cell]

    def cells(self) -> Iterator[CIBState]:
        return iter(self.states)

    def exact_cell(self, b: CIBState) -> Optional[int]:
        return self.index.get(belief_key(b))

    def locate(self, b: CIBState, interpolation: str = "multilinear") -> List[Tuple[int, float]]:
        cell = self.exact_cell(b)
        if cell is None:
            raise OffSupportQueryError(self.t, b)
        return [(cell, 1.0)]

    def nearest(self, b: CIBState) -> int:
        return self.locate(b)[0][0]

    def describe(self) -> Dict:
        return {"kind": self.kind,
                "nodes": [[b.c, [list(map(float, p)) for p in b.pi.marginals],
                           [list(map(float, p)) for p in b.pi_hat.marginals]] for b in self.states]}


def reachable_tree(spec: GameSpec, budget: Optional[int] = None) -> Dict[int, BeliefTree]:
    """
    Enumerate the signaling-free beliefs reachable from the prior.

    Every node carries pi = pi_hat; children follow every feasible (y, a)
    and every public successor with positive probability.
    """
    roots = [initial_state(spec, int(c)) for c in np.flatnonzero(spec.initial_public)]
    trees = {1: BeliefTree(1, roots)}
    for t in range(1, spec.horizon):
        children: Dict[Tuple, CIBState] = {}
        for b in trees[t].states:
            for (y, a), nxt in signaling_free_slice(spec, b).items():
                pc = spec.public_kernel[t - 1][(b.c,) + a]
                for c2 in np.flatnonzero(pc):
                    child = CIBState(int(c2), nxt, nxt)
                    children.setdefault(belief_key(child), child)
        if budget is not None and len(children) > budget:
            raise GridBudgetError(t + 1, len(children), budget)
        trees[t + 1] = BeliefTree(t + 1, list(children.values()))
    return trees


Support = Union[BeliefGrid, BeliefTree]


# ---------------------------------------------------------------------- #
# Value tables
# ---------------------------------------------------------------------- #
@dataclass(frozen=True, eq=False)
class ValueTable:
    t: int
    agent: int
    support: Support
    values: np.ndarray
    interpolation: str = "multilinear"

    def evaluate(self, b: CIBState) -> np.ndarray:
        out = np.zeros(self.values.shape[1])
        for cell, w in self.support.locate(b, self.interpolation):
            out += w * self.values[cell]
        return out


def value_eval(table: ValueTable, x: int, b: CIBState) -> float:
    if b.t != table.t:
        raise ValueError(f"value table for t={table.t} queried at t={b.t}")
    if not 0 <= x < table.values.shape[1]:
        raise ValueError(f"local state {x} out of range for agent {table.agent + 1}")
    return float(table.evaluate(b)[x])


class TableContinuation:
    def __init__(self, tables: Sequence[ValueTable]) -> None:
        self.tables = list(tables)

    def evaluate(self, n: int, b: CIBState) -> np.ndarray:
        return self.tables[n].evaluate(b)


def value_update(spec: GameSpec, continuation: Optional[Continuation], strategy: StrategySlice,
                 update: UpdateSlice, b: CIBState) -> List[np.ndarray]:
    stage = build_stage_game(spec, continuation, update, b)
    return type_values(stage, strategy)


# ---------------------------------------------------------------------- #
# Bundle
# ---------------------------------------------------------------------- #
@dataclass
class StageSweep:
    """Everything stored for one time step."""
    t: int
    support: Support
    strategies: List[StrategySlice]
    updates: List[UpdateSlice]
    values: List[ValueTable]
    gaps: np.ndarray
    residuals: np.ndarray
    converged: np.ndarray
    methods: List[str]

    @property
    def failed(self) -> List[int]:
        return [int(i) for i in np.flatnonzero(~self.converged)]


@dataclass
class EquilibriumBundle:
    spec_fingerprint: str
    config: SolverConfig
    horizon: int
    stages: Dict[int, StageSweep]

    @property
    def complete(self) -> bool:
        return all(not s.failed for s in self.stages.values())

    @property
    def worst_gap(self) -> float:
        return float(max(s.gaps.max(initial=0.0) for s in self.stages.values()))

    @property
    def worst_residual(self) -> float:
        return float(max(s.residuals.max(initial=0.0) for s in self.stages.values()))

    def failed_cells(self) -> List[Tuple[int, int]]:
        return [(t, cell) for t, s in sorted(self.stages.items()) for cell in s.failed]

    def support(self, t: int) -> Support:
        return self.stages[t].support

    def continuation(self, t: int) -> Optional[Continuation]:
        """Continuation used by stages at t, i.e. the value tables of t + 1."""
        if t >= self.horizon:
            return None
        return TableContinuation(self.stages[t + 1].values)


# ---------------------------------------------------------------------- #
# Backward induction
# ---------------------------------------------------------------------- #
class DPSolver:
    """
    Backward induction over the belief support, t = T..1.

    Cells within one time step are independent and may run on a worker pool;
    the tables of t + 1 are read-only while t is solved.
    """

    def __init__(self, config: Optional[SolverConfig] = None,
                 stage_solver: Optional[StageSolver] = None) -> None:
        self.config = config or SolverConfig()
        self.stage_solver = stage_solver or StageSolver(self.config)
        self.logger = logging.getLogger("DPSolver")

    def backward_induct(self, spec: GameSpec, m: int) -> EquilibriumBundle:
        cfg = self.config
        if cfg.symmetric_mode and not spec.is_symmetric():
            self.logger.warning("symmetric mode requested for an asymmetric spec; ignored")
        supports = {t: make_belief_grid(spec, t, m, cfg.belief_mode, cfg.grid_budget)
                    for t in range(1, spec.horizon + 1)}
        self.logger.info(f"Grid m={m} ({cfg.belief_mode}): "
                         + ", ".join(f"t={t}: {s.num_cells} cells" for t, s in supports.items()))
        return self._induct(spec, supports, self.stage_solver.solve)

    def backward_induct_tree(self, spec: GameSpec, solve: Optional[StageSolve] = None) -> EquilibriumBundle:
        if not spec.has_uncontrolled_beliefs():
            raise ValueError("reachable-tree mode needs strategy-independent belief propagation "
                             "(action-free kernels and state-independent action sets)")
        supports = reachable_tree(spec, self.config.grid_budget)
        self.logger.info("Reachable tree: "
                         + ", ".join(f"t={t}: {s.num_cells} nodes" for t, s in supports.items()))
        return self._induct(spec, supports, solve or self.stage_solver.solve)

    def _induct(self, spec: GameSpec, supports: Dict[int, Support], solve: StageSolve) -> EquilibriumBundle:
        bundle = EquilibriumBundle(spec_fingerprint(spec), self.config, spec.horizon, {})
        for t in range(spec.horizon, 0, -1):
            sweep = self._sweep(spec, t, supports[t], bundle.continuation(t), solve)
            bundle.stages[t] = sweep
            self._check_aliasing(t, sweep)
            self.logger.info(f"t={t}: solved {supports[t].num_cells} cells, "
                             f"worst gap {sweep.gaps.max(initial=0.0):.3e}, {len(sweep.failed)} failed")
        if not bundle.complete:
            self.logger.warning(f"bundle incomplete: {len(bundle.failed_cells())} failed cells")
        return bundle

    def _check_aliasing(self, t: int, sweep: StageSweep) -> None:
        """
        An aliased grid keeps pi and drops pi_hat, which is exact only while
        psi equals the signaling-free update. pi_hat enters a stage only through
        the fallback after a zero-probability action, so off_path_aliasing
        accepts the divergence for specs whose off-path beliefs are taken from pi.
        """
        support = sweep.support
        if support.kind != "grid" or support.mode != "aliased":
            return
        divergence = aliasing_divergence(sweep)
        if divergence <= self.config.consistency_tol:
            return
        if not self.config.off_path_aliasing:
            raise AliasingError(t, divergence)
        self.logger.info(f"t={t}: aliased grid, pi and pi_hat differ by up to {divergence:.3e} "
                         f"(off-path beliefs taken from pi)")

    def _sweep(self, spec: GameSpec, t: int, support: Support,
               continuation: Optional[Continuation], solve: StageSolve) -> StageSweep:
        def solve_cell(cell: int) -> Tuple[StageResult, List[np.ndarray]]:
            b = support.state(cell)
            try:
                result = solve(spec, continuation, b)
            except NoFixedPointError as e:
                self.logger.warning(f"t={t} cell {cell}: {e}")
                result = e.best
            return result, value_update(spec, continuation, result.strategy, result.update, b)

        cells = range(support.num_cells)
        if self.config.workers > 1:
            with ThreadPoolExecutor(max_workers=self.config.workers) as pool:
                outputs = list(pool.map(solve_cell, cells))
        else:
            outputs = [solve_cell(cell) for cell in cells]

        results = [r for r, _ in outputs]
        tables = []
        for n in spec.agents:
            values = np.array([v[n] for _, v in outputs]).reshape(support.num_cells, spec.local_size(n, t))
            values.flags.writeable = False
            tables.append(ValueTable(t, n, support, values, self.config.interpolation))
        return StageSweep(
            t=t,
            support=support,
            strategies=[r.strategy for r in results],
            updates=[r.update for r in results],
            values=tables,
            gaps=np.array([r.gap for r in results]),
            residuals=np.array([r.residual for r in results]),
            converged=np.array([r.converged for r in results], dtype=bool),
            methods=[r.method for r in results],
        )


def backward_induct(spec: GameSpec, m: int, config: Optional[SolverConfig] = None) -> EquilibriumBundle:
    return DPSolver(config).backward_induct(spec, m)


def aliasing_divergence(sweep: StageSweep) -> float:
    """Largest gap between the stored consistent and signaling-free updates of a sweep."""
    worst = 0.0
    for update in sweep.updates:
        for key, belief in update.beliefs.items():
            worst = max(worst, belief.max_abs_diff(update.signaling_free[key]))
    return worst


def refinement_report(spec: GameSpec, m_values: Sequence[int],
                      config: Optional[SolverConfig] = None) -> List[Dict]:
    """Max change of every value table between consecutive resolutions, at the coarse cells."""
    solver = DPSolver(config)
    bundles = [(m, solver.backward_induct(spec, m)) for m in m_values]
    rows = []
    for (m0, coarse), (m1, fine) in zip(bundles, bundles[1:]):
        for t in range(1, spec.horizon + 1):
            change = 0.0
            sweep = coarse.stages[t]
            for cell, b in enumerate(sweep.support.cells()):
                for n in spec.agents:
                    fresh = fine.stages[t].values[n].evaluate(b)
                    change = max(change, float(np.abs(fresh - sweep.values[n].values[cell]).max()))
            rows.append({"m_coarse": m0, "m_fine": m1, "t": t, "max_change": change})
    return rows
