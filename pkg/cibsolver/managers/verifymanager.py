import csv
import hashlib
import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence, Set, Tuple

import numpy as np

from cibsolver.managers.beliefmanager import (
    BeliefVector,
    CIBState,
    EnumerationBudgetError,
    ImpossibleConditioningError,
    consistent_update,
    initial_state,
    joint_bayes_oracle,
    signaling_free_step,
    trajectory_count,
)
from cibsolver.managers.configmanager import VerifyConfig
from cibsolver.managers.dpmanager import EquilibriumBundle, ValueTable
from cibsolver.managers.modelmanager import GameSpec, spec_fingerprint
from cibsolver.managers.stagemanager import (
    StrategySlice,
    bne_gap,
    build_stage_game,
    consistency_residual,
    feasible_pairs,
    type_action_payoffs,
)

logger = logging.getLogger("Verifier")

SIMULATION_SIGMAS = 3.0


class ReachableFailedCellError(RuntimeError):
    """Raised when a cell the solver could not certify is reachable on path."""
    def __init__(self, t: int, cell: int) -> None:
        super().__init__(f"failed cell {cell} at t={t} is reachable")
        self.t = t
        self.cell = cell


# ---------------------------------------------------------------------- #
# Histories and profiles
# ---------------------------------------------------------------------- #
Step = Tuple[Tuple[int, ...], Tuple[int, ...], int]


@dataclass(frozen=True)
class CommonHistory:
    """h^c_t: the initial public state and one (y, a, c_{s+1}) triple per past step."""
    c1: int
    steps: Tuple[Step, ...] = ()

    @property
    def t(self) -> int:
        return len(self.steps) + 1

    @property
    def actions(self) -> List[Tuple[int, ...]]:
        return [a for _, a, _ in self.steps]

    @property
    def observations(self) -> List[Tuple[int, ...]]:
        return [y for y, _, _ in self.steps]

    def extend(self, y: Tuple[int, ...], a: Tuple[int, ...], c2: int) -> "CommonHistory":
        return CommonHistory(self.c1, self.steps + ((tuple(y), tuple(a), int(c2)),))

    def __str__(self) -> str:
        parts = [f"c={self.c1}"] + [f"y={y} a={a} c={c}" for y, a, c in self.steps]
        return " | ".join(parts)


class Profile:
    """A pair (lambda, psi) queried at CIB states."""

    def __init__(self, spec: GameSpec) -> None:
        self.spec = spec

    def strategy(self, b: CIBState) -> StrategySlice:
        raise NotImplementedError

    def update(self, b: CIBState, y: Tuple[int, ...], a: Tuple[int, ...]) -> BeliefVector:
        return consistent_update(self.spec, self.strategy(b), b, y, a, on_impossible="uniform")

    def signaling_free(self, b: CIBState, y: Tuple[int, ...], a: Tuple[int, ...]) -> BeliefVector:
        return signaling_free_step(self.spec, b.pi_hat, y, a, on_impossible="uniform")

    def next_state(self, b: CIBState, y: Tuple[int, ...], a: Tuple[int, ...], c2: int) -> CIBState:
        return CIBState(int(c2), self.update(b, y, a), self.signaling_free(b, y, a))

    def states_along(self, history: CommonHistory) -> List[CIBState]:
        states = [initial_state(self.spec, history.c1)]
        for y, a, c2 in history.steps:
            states.append(self.next_state(states[-1], y, a, c2))
        return states


class ExplicitProfile(Profile):
    """Profile from callables; psi defaults to the consistent update of lambda."""

    def __init__(self, spec: GameSpec, strategy: Callable[[CIBState], StrategySlice],
                 update: Optional[Callable[[CIBState, Tuple, Tuple], BeliefVector]] = None) -> None:
        super().__init__(spec)
        self._strategy = strategy
        self._update = update

    def strategy(self, b: CIBState) -> StrategySlice:
        return self._strategy(b)

    def update(self, b: CIBState, y: Tuple[int, ...], a: Tuple[int, ...]) -> BeliefVector:
        if self._update is None:
            return super().update(b, y, a)
        return self._update(b, y, a)


class BundleProfile(Profile):
    """
    Profile read from an equilibrium bundle.

    lambda at b is the slice of the nearest support cell; psi is the stored
    slice when b is a support cell, else the consistent update of lambda at b.
    """

    def __init__(self, spec: GameSpec, bundle: EquilibriumBundle) -> None:
        super().__init__(spec)
        self.bundle = bundle

    def strategy(self, b: CIBState) -> StrategySlice:
        sweep = self.bundle.stages[b.t]
        return sweep.strategies[sweep.support.nearest(b)]

    def _stored(self, b: CIBState, y: Tuple[int, ...], a: Tuple[int, ...]):
        sweep = self.bundle.stages[b.t]
        cell = sweep.support.exact_cell(b)
        if cell is None or (tuple(y), tuple(a)) not in sweep.updates[cell]:
            return None
        return sweep.updates[cell]

    def update(self, b: CIBState, y: Tuple[int, ...], a: Tuple[int, ...]) -> BeliefVector:
        stored = self._stored(b, y, a)
        if stored is None:
            return super().update(b, y, a)
        return stored.beliefs[(tuple(y), tuple(a))]

    def signaling_free(self, b: CIBState, y: Tuple[int, ...], a: Tuple[int, ...]) -> BeliefVector:
        stored = self._stored(b, y, a)
        if stored is None:
            return super().signaling_free(b, y, a)
        return stored.signaling_free[(tuple(y), tuple(a))]


# ---------------------------------------------------------------------- #
# Deviations
# ---------------------------------------------------------------------- #
Deviation = Callable[[int, CommonHistory, Tuple[int, ...], CIBState], np.ndarray]


def random_deviation(spec: GameSpec, n: int, seed: int) -> Deviation:
    """Behavioral deviation: a seeded Dirichlet draw per (t, h^c_t, own trajectory)."""
    def deviation(t: int, history: CommonHistory, own: Tuple[int, ...], b: CIBState) -> np.ndarray:
        digest = hashlib.sha256(f"{seed}:{n}:{t}:{history}:{own}".encode()).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        adm = spec.admissible[n][t - 1][own[-1]]
        probs = np.zeros(adm.shape)
        probs[adm] = rng.dirichlet(np.ones(int(adm.sum())))
        return probs
    return deviation


def open_loop_deviation(spec: GameSpec, n: int, actions: Sequence[int]) -> Deviation:
    """Pure open-loop deviation; falls back to the lowest admissible action."""
    def deviation(t: int, history: CommonHistory, own: Tuple[int, ...], b: CIBState) -> np.ndarray:
        adm = spec.admissible[n][t - 1][own[-1]]
        a = actions[t - 1] if adm[actions[t - 1]] else int(np.flatnonzero(adm)[0])
        probs = np.zeros(adm.shape)
        probs[a] = 1.0
        return probs
    return deviation


def no_deviation(profile: Profile, n: int) -> Deviation:
    def deviation(t: int, history: CommonHistory, own: Tuple[int, ...], b: CIBState) -> np.ndarray:
        return profile.strategy(b).probs[n][own[-1]]
    return deviation


# ---------------------------------------------------------------------- #
# History enumeration
# ---------------------------------------------------------------------- #
Actor = Callable[[int, int, CommonHistory, CIBState, int], Optional[np.ndarray]]


def _expand(factor: np.ndarray, ndim: int, axes: Sequence[int]) -> np.ndarray:
    shape = [1] * ndim
    for ax, size in zip(axes, factor.shape):
        shape[ax] = size
    return factor.reshape(shape)


def profile_actor(profile: Profile) -> Actor:
    def actor(k: int, t: int, history: CommonHistory, b: CIBState, a_k: int) -> np.ndarray:
        col = profile.strategy(b).probs[k][:, a_k]
        return col.reshape((1,) * (t - 1) + col.shape)
    return actor


def deviation_actor(profile: Profile, n: int, deviation: Deviation) -> Actor:
    """Others follow the profile; agent n follows the deviation over its own trajectory."""
    follow = profile_actor(profile)

    def actor(k: int, t: int, history: CommonHistory, b: CIBState, a_k: int) -> np.ndarray:
        if k != n:
            return follow(k, t, history, b, a_k)
        sizes = [profile.spec.local_size(n, s) for s in range(1, t + 1)]
        out = np.zeros(sizes)
        for own in itertools.product(*(range(size) for size in sizes)):
            out[own] = deviation(t, history, own, b)[a_k]
        return out
    return actor


class HistoryWalker:
    """
    Forward enumeration of common histories with unnormalized joint
    trajectory arrays P(x_{1:t}, h^c_t), one per actor (None = signaling-free).

    Axis (s - 1) * N + k of every array holds x^k_s. Enumeration is
    exhaustive when the estimated work fits the trajectory budget; otherwise
    random root-to-leaf paths are sampled and coverage is reported.
    """

    def __init__(self, spec: GameSpec, profile: Profile, config: VerifyConfig) -> None:
        self.spec = spec
        self.profile = profile
        self.config = config
        self.pairs = {t: feasible_pairs(spec, t) for t in range(1, spec.horizon)}
        self.estimate = self._estimate()
        self.exhaustive = self.estimate[1] <= config.trajectory_budget
        self.visited = 0

    def _estimate(self) -> Tuple[int, int]:
        spec = self.spec
        count = int((spec.initial_public > 0).sum())
        histories, work = count, count * trajectory_count(spec, 1)
        for t in range(1, spec.horizon):
            count *= len(self.pairs[t]) * spec.public_size(t + 1)
            histories += count
            work += count * trajectory_count(spec, t + 1)
        return histories, work

    @property
    def coverage(self) -> float:
        return 1.0 if self.exhaustive else min(1.0, self.visited / max(1, self.estimate[0]))

    def _children(self, history: CommonHistory, b: CIBState, arrays: List[np.ndarray],
                  actors: Sequence[Optional[Actor]]):
        spec = self.spec
        t = history.t
        N = spec.num_agents
        for y, a in self.pairs.get(t, []):
            pc = spec.public_kernel[t - 1][(b.c,) + a]
            idx = (slice(None),) + a
            nxt = []
            for J, actor in zip(arrays, actors):
                out = J.reshape(J.shape + (1,) * N)
                ndim = out.ndim
                for k in spec.agents:
                    q = spec.obs_kernel[k][t - 1][idx][:, y[k]] * spec.admissible[k][t - 1][:, a[k]]
                    step = q[:, None] * spec.local_kernel[k][t - 1][idx]
                    out = out * _expand(step, ndim, ((t - 1) * N + k, t * N + k))
                    if actor is not None:
                        w = actor(k, t, history, b, a[k])
                        out = out * _expand(w, ndim, [(s - 1) * N + k for s in range(1, t + 1)])
                nxt.append(out)
            for c2 in np.flatnonzero(pc):
                yield (y, a, int(c2)), [J * pc[c2] for J in nxt]

    def walk(self, actors: Sequence[Optional[Actor]], keep: int = -1, seed: int = 0
             ) -> Iterator[Tuple[CommonHistory, List[CIBState], List[np.ndarray]]]:
        """Yield (h^c_t, b_{1:t}, arrays); descend only where arrays[keep] has mass."""
        spec = self.spec
        prior = BeliefVector.of(1, spec.initial_local).joint()
        roots = []
        for c1 in np.flatnonzero(spec.initial_public):
            history = CommonHistory(int(c1))
            roots.append((history, [initial_state(spec, int(c1))],
                          [prior * spec.initial_public[c1] for _ in actors]))
        self.visited = 0
        if self.exhaustive:
            stack = list(reversed(roots))
            while stack:
                history, states, arrays = stack.pop()
                self.visited += 1
                yield history, states, arrays
                children = []
                for (y, a, c2), nxt in self._children(history, states[-1], arrays, actors):
                    if nxt[keep].sum() > 0:
                        b2 = self.profile.next_state(states[-1], y, a, c2)
                        children.append((history.extend(y, a, c2), states + [b2], nxt))
                stack.extend(reversed(children))
            return

        logger.warning(f"history enumeration exceeds budget ({self.estimate[1]} > "
                       f"{self.config.trajectory_budget}); sampling {self.config.history_samples} paths")
        rng = np.random.default_rng(seed)
        seen: Set[CommonHistory] = set()
        for _ in range(self.config.history_samples):
            history, states, arrays = roots[int(rng.integers(len(roots)))]
            while True:
                if history not in seen:
                    seen.add(history)
                    self.visited += 1
                    yield history, states, arrays
                children = [(step, nxt) for step, nxt in self._children(history, states[-1], arrays, actors)
                            if nxt[keep].sum() > 0]
                if not children:
                    break
                (y, a, c2), arrays = children[int(rng.integers(len(children)))]
                states = states + [self.profile.next_state(states[-1], y, a, c2)]
                history = history.extend(y, a, c2)


# ---------------------------------------------------------------------- #
# Full belief system
# ---------------------------------------------------------------------- #
@dataclass(frozen=True, eq=False)
class FullBelief:
    """
    Per-agent beliefs over local-state trajectories given h^c_t.

    mu[k] and mu_hat[k] have one axis per time step 1..t.
    """
    history: CommonHistory
    states: Tuple[CIBState, ...]
    mu: Tuple[np.ndarray, ...]
    mu_hat: Tuple[np.ndarray, ...]
    marginal_residual: float
    zero_branch: Tuple[bool, ...]

    @property
    def t(self) -> int:
        return self.history.t

    @property
    def num_agents(self) -> int:
        return len(self.mu)

    def product(self) -> np.ndarray:
        """prod_k mu[k] laid out with axis (s - 1) * N + k for x^k_s."""
        N, t = self.num_agents, self.t
        out = np.ones([1] * (N * t))
        for k, m in enumerate(self.mu):
            out = out * _expand(m, N * t, [(s - 1) * N + k for s in range(1, t + 1)])
        return out

    def agent_belief(self, n: int, own: Sequence[int]) -> np.ndarray:
        """Agent n's belief over x_{1:t}: indicator on its own trajectory times the others' mu."""
        N, t = self.num_agents, self.t
        out = np.ones([1] * (N * t))
        for k, m in enumerate(self.mu):
            if k == n:
                m = np.zeros(m.shape)
                m[tuple(own)] = 1.0
            out = out * _expand(m, N * t, [(s - 1) * N + k for s in range(1, t + 1)])
        return out


def construct_full_belief(spec: GameSpec, profile: Profile, history: CommonHistory,
                          budget: int = 10 ** 6) -> FullBelief:
    count = trajectory_count(spec, history.t)
    if count > budget:
        raise EnumerationBudgetError(count, budget)
    states = profile.states_along(history)
    mus, mu_hats, zero = [], [], []
    residual = 0.0
    for k in spec.agents:
        mu = np.asarray(spec.initial_local[k], dtype=float).copy()
        mu_hat = mu.copy()
        residual = max(residual, float(np.abs(mu - states[0].pi[k]).max()))
        used_zero = False
        for s, (y, a, _) in enumerate(history.steps, start=1):
            b = states[s - 1]
            idx = (slice(None),) + a
            q = spec.obs_kernel[k][s - 1][idx][:, y[k]] * spec.admissible[k][s - 1][:, a[k]]
            step = q[:, None] * spec.local_kernel[k][s - 1][idx]
            lam = profile.strategy(b).probs[k][:, a[k]]

            nxt_hat = mu_hat[..., None] * step
            if nxt_hat.sum() <= 0.0:
                nxt_hat = np.ones(mu_hat.shape)[..., None] * step
                if nxt_hat.sum() <= 0.0:
                    raise ImpossibleConditioningError(f"observation of agent {k + 1} impossible at t={s}: {history}")
            mu_hat = nxt_hat / nxt_hat.sum()

            nxt = mu[..., None] * (lam[:, None] * step)
            if nxt.sum() > 0.0:
                mu = nxt / nxt.sum()
            else:
                used_zero = True
                gamma = states[s].pi[k]
                support = mu_hat > 0
                counts = support.reshape(-1, support.shape[-1]).sum(axis=0)
                mu = np.where(support, gamma / np.maximum(counts, 1), 0.0)
            marginal = mu.reshape(-1, mu.shape[-1]).sum(axis=0)
            residual = max(residual, float(np.abs(marginal - states[s].pi[k]).max()))
        mus.append(mu)
        mu_hats.append(mu_hat)
        zero.append(used_zero)
    return FullBelief(history, tuple(states), tuple(mus), tuple(mu_hats), residual, tuple(zero))


# ---------------------------------------------------------------------- #
# Brute-force belief checks
# ---------------------------------------------------------------------- #
@dataclass
class ConsistencyReport:
    histories_checked: int = 0
    exhaustive: bool = True
    coverage: float = 1.0
    max_bayes_residual: float = 0.0
    max_marginal_residual: float = 0.0
    support_violations: int = 0
    flagged: List[Tuple[str, str, float]] = field(default_factory=list)

    def passed(self, bayes_tol: float, marginal_tol: float) -> bool:
        return (self.max_bayes_residual <= bayes_tol and self.max_marginal_residual <= marginal_tol
                and self.support_violations == 0)


def check_consistency(spec: GameSpec, profile: Profile, config: Optional[VerifyConfig] = None
                      ) -> ConsistencyReport:
    """
    Bayes consistency of the full belief system at every common history that
    is possible under signaling-free propagation.

    On positive-probability histories the exact P(x_{1:t} | h^c_t) must equal
    prod_k mu^c_k; everywhere the mu marginals must equal the profile's beliefs
    and mu must vanish where the signaling-free oracle does.
    """
    config = config or VerifyConfig()
    walker = HistoryWalker(spec, profile, config)
    report = ConsistencyReport()
    for history, _, (J, J_hat) in walker.walk([profile_actor(profile), None], keep=-1, seed=config.seed):
        fb = construct_full_belief(spec, profile, history, config.trajectory_budget)
        product = fb.product()
        report.max_marginal_residual = max(report.max_marginal_residual, fb.marginal_residual)
        if fb.marginal_residual > config.marginal_tol:
            report.flagged.append((str(history), "marginal", fb.marginal_residual))
        total = J.sum()
        if total > 0:
            bayes = float(np.abs(J / total - product).max())
            report.max_bayes_residual = max(report.max_bayes_residual, bayes)
            if bayes > config.consistency_tol:
                report.flagged.append((str(history), "bayes", bayes))
        oracle = joint_bayes_oracle(spec, history.actions, history.observations,
                                    budget=config.trajectory_budget)
        violations = int(((product > 0) & (oracle.probs == 0)).sum())
        if violations:
            report.support_violations += violations
            report.flagged.append((str(history), "support", float(violations)))
    report.histories_checked = walker.visited
    report.exhaustive = walker.exhaustive
    report.coverage = walker.coverage
    return report


@dataclass
class IndependenceReport:
    deviations_checked: int = 0
    information_sets_checked: int = 0
    max_residual: float = 0.0
    worst: str = ""
    exhaustive: bool = True


def check_conditional_independence(spec: GameSpec, profile: Profile,
                                   deviations: Sequence[Tuple[int, Deviation]],
                                   config: Optional[VerifyConfig] = None) -> IndependenceReport:
    """
    For each unilateral deviation g' of agent n and each positive-probability
    (h^c_t, x^n_{1:t}), the exact posterior over the others' trajectories must
    equal prod_{k != n} mu^c_k(h^c_t).
    """
    config = config or VerifyConfig()
    report = IndependenceReport()
    N = spec.num_agents
    for n, deviation in deviations:
        walker = HistoryWalker(spec, profile, config)
        actor = deviation_actor(profile, n, deviation)
        for history, _, (J,) in walker.walk([actor], keep=0, seed=config.seed):
            total = J.sum()
            if total <= 0:
                continue
            joint = J / total
            t = history.t
            own_axes = [(s - 1) * N + n for s in range(1, t + 1)]
            other_axes = tuple(i for i in range(joint.ndim) if i not in own_axes)
            own_marginal = joint.sum(axis=other_axes, keepdims=True)
            fb = construct_full_belief(spec, profile, history, config.trajectory_budget)
            expected = np.ones([1] * joint.ndim)
            for k, m in enumerate(fb.mu):
                if k != n:
                    expected = expected * _expand(m, joint.ndim, [(s - 1) * N + k for s in range(1, t + 1)])
            positive = np.broadcast_to(own_marginal > 0, joint.shape)
            cond = np.divide(joint, own_marginal, out=np.zeros(joint.shape), where=positive)
            diff = np.abs(cond - np.broadcast_to(expected, joint.shape))[positive]
            residual = float(diff.max()) if diff.size else 0.0
            report.information_sets_checked += int((own_marginal > 0).sum())
            if residual > report.max_residual:
                report.max_residual = residual
                report.worst = f"agent {n + 1}: {history}"
        report.deviations_checked += 1
        report.exhaustive = report.exhaustive and walker.exhaustive
    return report


# ---------------------------------------------------------------------- #
# Reachability and the deviation MDP
# ---------------------------------------------------------------------- #
def reachable_cells(spec: GameSpec, bundle: EquilibriumBundle) -> Dict[int, Set[int]]:
    """All t=1 cells plus every cell a positive-probability (y, a, c') leads to."""
    reach = {1: set(range(bundle.stages[1].support.num_cells))}
    for t in range(1, spec.horizon):
        sweep, nxt = bundle.stages[t], bundle.stages[t + 1]
        interpolation = nxt.values[0].interpolation
        reach[t + 1] = set()
        for cell in sorted(reach[t]):
            b = sweep.support.state(cell)
            strategy = sweep.strategies[cell]
            update = sweep.updates[cell]
            for (y, a) in update.keys():
                idx = (slice(None),) + a
                prob = 1.0
                for k in spec.agents:
                    q = spec.obs_kernel[k][t - 1][idx][:, y[k]]
                    prob *= float((b.pi[k] * strategy.probs[k][:, a[k]] * q).sum())
                if prob <= 0:
                    continue
                pc = spec.public_kernel[t - 1][(b.c,) + a]
                for c2 in np.flatnonzero(pc):
                    b2 = CIBState(int(c2), update.beliefs[(y, a)], update.signaling_free[(y, a)])
                    reach[t + 1].update(c for c, w in nxt.support.locate(b2, interpolation) if w > 0)
    return reach


class _AgentContinuation:
    """Continuation values for agent n only; the others' payoffs are irrelevant here."""

    def __init__(self, n: int, table: ValueTable, sizes: Sequence[int]) -> None:
        self.n = n
        self.table = table
        self.sizes = sizes

    def evaluate(self, k: int, b: CIBState) -> np.ndarray:
        if k != self.n:
            return np.zeros(self.sizes[k])
        return self.table.evaluate(b)


@dataclass
class DeviationValues:
    """Optimal deviation values W and policy values V^lambda of one agent, per (t, cell, x^n)."""
    agent: int
    best: Dict[int, np.ndarray]
    follow: Dict[int, np.ndarray]

    def gaps(self, t: int) -> np.ndarray:
        return self.best[t] - self.follow[t]


def deviation_mdp_best_response(spec: GameSpec, bundle: EquilibriumBundle, n: int,
                                reachable: Optional[Dict[int, Set[int]]] = None) -> DeviationValues:
    """
    Agent n's finite-horizon MDP over (x^n, b) with the others fixed to the
    bundle's slices and beliefs moving by the stored psi, solved by backward
    induction on the bundle's own support and interpolation.
    """
    reachable = reachable if reachable is not None else reachable_cells(spec, bundle)
    for t, cell in bundle.failed_cells():
        if cell in reachable.get(t, set()):
            raise ReachableFailedCellError(t, cell)
    best, follow = {}, {}
    for t in range(spec.horizon, 0, -1):
        sweep = bundle.stages[t]
        sizes = spec.local_shape(t + 1) if t < spec.horizon else spec.local_shape(t)
        cont_best = cont_follow = None
        if t < spec.horizon:
            interp = bundle.stages[t + 1].values[n].interpolation
            support = bundle.stages[t + 1].support
            cont_best = _AgentContinuation(n, ValueTable(t + 1, n, support, best[t + 1], interp), sizes)
            cont_follow = _AgentContinuation(n, ValueTable(t + 1, n, support, follow[t + 1], interp), sizes)
        W = np.zeros((sweep.support.num_cells, spec.local_size(n, t)))
        V = np.zeros_like(W)
        adm = spec.admissible[n][t - 1]
        for cell in range(sweep.support.num_cells):
            b = sweep.support.state(cell)
            strategy = sweep.strategies[cell]
            table = type_action_payoffs(build_stage_game(spec, cont_best, sweep.updates[cell], b), n, strategy)
            W[cell] = np.where(adm, table, -np.inf).max(axis=1)
            if cont_follow is not None:
                table = type_action_payoffs(build_stage_game(spec, cont_follow, sweep.updates[cell], b),
                                            n, strategy)
            V[cell] = (table * strategy.probs[n]).sum(axis=1)
        best[t], follow[t] = W, V
    return DeviationValues(n, best, follow)


# ---------------------------------------------------------------------- #
# Monte-Carlo rollouts
# ---------------------------------------------------------------------- #
def _draw_rows(rng: np.random.Generator, probs: np.ndarray) -> np.ndarray:
    probs = np.atleast_2d(probs)
    u = rng.random(probs.shape[0])
    idx = (np.cumsum(probs, axis=1) < u[:, None]).sum(axis=1)
    return np.minimum(idx, probs.shape[1] - 1)


def simulate_value(spec: GameSpec, bundle: EquilibriumBundle, t: int, cell: int, n: int, x: int,
                   samples: int, rng: np.random.Generator) -> Tuple[float, float]:
    """
    Roll out the bundle from (x^n, cell) and return (mean return, standard error).

    The others' local states are drawn once from the cell's belief and then
    move through the local kernels with agent n's own state, so every agent
    acts on its true type. The common belief moves by the stored update
    slices; a belief between support cells picks a cell by sampling its
    interpolation weights.
    """
    N = spec.num_agents
    root = bundle.stages[t].support.state(cell)
    xs = [np.full(samples, x) if k == n else _draw_rows(rng, np.tile(root.pi[k], (samples, 1)))
          for k in spec.agents]
    total = np.zeros(samples)
    cells = np.full(samples, cell)
    for s in range(t, spec.horizon + 1):
        sweep = bundle.stages[s]
        next_cells = np.zeros(samples, dtype=int)
        next_xs = [np.zeros(samples, dtype=int) for _ in spec.agents]
        for c_id in np.unique(cells):
            rows = np.flatnonzero(cells == c_id)
            size = len(rows)
            b = sweep.support.state(int(c_id))
            strategy = sweep.strategies[int(c_id)]
            cur = [xk[rows] for xk in xs]
            acts = [_draw_rows(rng, strategy.probs[k][cur[k]]) for k in spec.agents]
            total[rows] += spec.utility[n][s - 1][(np.full(size, b.c),) + tuple(cur) + tuple(acts)]
            if s == spec.horizon:
                continue
            ys = [_draw_rows(rng, spec.obs_kernel[k][s - 1][(cur[k],) + tuple(acts)]) for k in spec.agents]
            for k in spec.agents:
                next_xs[k][rows] = _draw_rows(rng, spec.local_kernel[k][s - 1][(cur[k],) + tuple(acts)])
            c2 = _draw_rows(rng, spec.public_kernel[s - 1][(np.full(size, b.c),) + tuple(acts)])
            keys = np.stack(ys + acts + [c2], axis=1)
            uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
            inverse = inverse.reshape(-1)
            update = sweep.updates[int(c_id)]
            nxt = bundle.stages[s + 1]
            for j, key in enumerate(uniq):
                y, a = tuple(int(v) for v in key[:N]), tuple(int(v) for v in key[N:2 * N])
                if (y, a) not in update:
                    raise ValueError(f"t={s} cell {int(c_id)}: no stored update for y={y} a={a}, "
                                     f"which the true types reach")
                b2 = CIBState(int(key[2 * N]), update.beliefs[(y, a)], update.signaling_free[(y, a)])
                targets = nxt.support.locate(b2, nxt.values[n].interpolation)
                ids = np.array([c for c, _ in targets])
                ws = np.array([w for _, w in targets])
                sel = rows[inverse == j]
                next_cells[sel] = ids[_draw_rows(rng, np.tile(ws / ws.sum(), (len(sel), 1)))]
        cells, xs = next_cells, next_xs
    stderr = float(total.std(ddof=1) / np.sqrt(samples)) if samples > 1 else 0.0
    return float(total.mean()), stderr


# ---------------------------------------------------------------------- #
# Exhaustive behavioral deviations
# ---------------------------------------------------------------------- #
def _info_set_count(spec: GameSpec, n: int) -> int:
    count = 1
    for t in range(1, spec.horizon):
        branching = len(spec.joint_action_profiles(t)) * int(np.prod(spec.obs_shape(t)))
        count *= branching * spec.public_size(t + 1) * spec.local_size(n, t + 1)
    return count


def exhaustive_deviation_gap(spec: GameSpec, profile: Profile, n: int,
                             budget: int = 10 ** 6) -> Tuple[float, Dict[Tuple[int, int], Tuple[float, float]]]:
    """
    Best behavioral deviation of agent n against the profile, by dynamic
    programming over agent n's information sets (h^c_t, x^n_{1:t}).

    The others' state posterior is carried jointly and updated by brute-force
    Bayes, without assuming a product form. Returns the worst gap over
    initial (c_1, x^n_1) and the (best, follow) values per root.
    """
    count = _info_set_count(spec, n)
    if count > budget:
        raise EnumerationBudgetError(count, budget, "information sets")
    N = spec.num_agents
    others = [k for k in spec.agents if k != n]

    def lift(vec: np.ndarray, j: int) -> np.ndarray:
        return vec.reshape(tuple(-1 if i == j else 1 for i in range(len(others))))

    def value(t: int, b: CIBState, x_n: int, post: np.ndarray) -> Tuple[float, float]:
        strategy = profile.strategy(b)
        q_best, q_follow = {}, {}
        other_actions = [np.flatnonzero(spec.some_admissible(k, t)) for k in others]
        for a_n in spec.admissible_actions(n, t, x_n):
            acc_best = acc_follow = 0.0
            for a_rest in itertools.product(*other_actions):
                a = list(a_rest)
                a.insert(n, a_n)
                a = tuple(int(v) for v in a)
                w = post.copy()
                for j, k in enumerate(others):
                    w = w * lift(strategy.probs[k][:, a[k]], j)
                mass = w.sum()
                if mass <= 0:
                    continue
                u = spec.utility[n][t - 1][b.c]
                u = u.take(x_n, axis=n)[(Ellipsis,) + a]
                flow = float((w * u).sum())
                acc_best += flow
                acc_follow += flow
                if t == spec.horizon:
                    continue
                idx = (slice(None),) + a
                pc = spec.public_kernel[t - 1][(b.c,) + a]
                own_step = spec.local_kernel[n][t - 1][(x_n,) + a]
                for y in spec.joint_observation_profiles(t):
                    own_y = spec.obs_kernel[n][t - 1][(x_n,) + a][y[n]]
                    if own_y <= 0:
                        continue
                    nxt = w
                    for j, k in enumerate(others):
                        nxt = nxt * lift(spec.obs_kernel[k][t - 1][idx][:, y[k]], j)
                    for j, k in enumerate(others):
                        nxt = np.moveaxis(np.tensordot(nxt, spec.local_kernel[k][t - 1][idx], axes=([j], [0])), -1, j)
                    branch = nxt.sum()
                    if branch <= 0:
                        continue
                    for c2 in np.flatnonzero(pc):
                        b2 = profile.next_state(b, y, a, int(c2))
                        for x2 in np.flatnonzero(own_step):
                            p = own_y * pc[c2] * branch * own_step[x2]
                            vb, vf = value(t + 1, b2, int(x2), nxt / branch)
                            acc_best += p * vb
                            acc_follow += p * vf
            q_best[a_n], q_follow[a_n] = acc_best, acc_follow
        lam = strategy.probs[n][x_n]
        return max(q_best.values()), float(sum(lam[a] * q for a, q in q_follow.items()))

    prior_others = np.ones([1] * len(others))
    for j, k in enumerate(others):
        prior_others = prior_others * lift(np.asarray(spec.initial_local[k], dtype=float), j)
    roots: Dict[Tuple[int, int], Tuple[float, float]] = {}
    gap = 0.0
    for c1 in np.flatnonzero(spec.initial_public):
        b1 = initial_state(spec, int(c1))
        for x in np.flatnonzero(spec.initial_local[n]):
            best, follow = value(1, b1, int(x), prior_others)
            roots[(int(c1), int(x))] = (best, follow)
            gap = max(gap, best - follow)
    return gap, roots


# ---------------------------------------------------------------------- #
# Certificate
# ---------------------------------------------------------------------- #
@dataclass
class CellCheck:
    t: int
    cell: int
    c: int
    on_path: bool
    failed: bool
    consistency_residual: float
    bne_gap: float
    deviation_gap: float = 0.0
    value_mismatch: float = 0.0


@dataclass
class SimulationCheck:
    t: int
    cell: int
    agent: int
    x: int
    mean: float
    stderr: float
    tabulated: float

    @property
    def ok(self) -> bool:
        return abs(self.mean - self.tabulated) <= SIMULATION_SIGMAS * self.stderr + 1e-9


@dataclass
class VerificationReport:
    spec_name: str
    fingerprint: str
    support: str
    exact: bool
    config: VerifyConfig
    cells: List[CellCheck] = field(default_factory=list)
    simulations: List[SimulationCheck] = field(default_factory=list)
    consistency: Optional[ConsistencyReport] = None
    exhaustive_gaps: Dict[int, float] = field(default_factory=dict)
    notes: List[str] = field(default_factory=list)
    criteria: Dict[str, Tuple[bool, str]] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(ok for ok, _ in self.criteria.values())

    def max_deviation_gap(self, on_path: bool = True) -> float:
        return max((c.deviation_gap for c in self.cells if c.on_path or not on_path), default=0.0)

    def worst_cells(self, count: int = 5) -> List[CellCheck]:
        return sorted(self.cells, key=lambda c: -max(c.deviation_gap, c.bne_gap))[:count]

    def to_text(self) -> str:
        lines = [
            "CIB-PBE certificate report",
            f"spec: {self.spec_name} ({self.fingerprint[:12]})",
            f"support: {self.support}",
            "certified set: sequential rationality against CIB deviations at every "
            + ("node of the reachable belief tree" if self.exact else "on-path grid cell (t=1 cells and cells reachable from them)")
            + "; consistency at every enumerated common history",
            "",
        ]
        for name, (ok, detail) in self.criteria.items():
            lines.append(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
        lines += [""] + self.notes
        if not self.passed:
            lines.append("worst cells:")
            for c in self.worst_cells():
                lines.append(f"  t={c.t} cell={c.cell} c={c.c} bne_gap={c.bne_gap:.3e} "
                             f"deviation_gap={c.deviation_gap:.3e} on_path={c.on_path}")
        lines.append(f"verdict: {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines) + "\n"

    def write_csv(self, path: Any) -> Path:
        path = Path(path)
        with path.open("w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["t", "cell", "c", "on_path", "failed", "consistency_residual",
                             "bne_gap", "deviation_gap", "value_mismatch"])
            for c in self.cells:
                writer.writerow([c.t, c.cell, c.c, int(c.on_path), int(c.failed), repr(c.consistency_residual),
                                 repr(c.bne_gap), repr(c.deviation_gap), repr(c.value_mismatch)])
        return path


class Verifier:
    """
    Recomputes every certificate of a bundle from (spec, lambda, psi) alone:
      (i) per-cell consistency of psi, (ii) per-cell stage BNE gaps,
      (iii) deviation-MDP gaps of every agent, (iv) Monte-Carlo value checks,
    plus brute-force consistency over common histories and, where the
    information-set tree is small, exhaustive behavioral deviations.
    """

    def __init__(self, config: Optional[VerifyConfig] = None) -> None:
        self.config = config or VerifyConfig()
        self.logger = logging.getLogger("Verifier")

    def verify(self, spec: GameSpec, bundle: EquilibriumBundle) -> VerificationReport:
        cfg = self.config
        support = bundle.stages[1].support
        exact = support.kind == "tree"
        desc = support.describe()
        report = VerificationReport(
            spec_name=spec.name,
            fingerprint=bundle.spec_fingerprint,
            support="reachable tree" if exact else f"grid m={desc['m']} ({desc['mode']})",
            exact=exact,
            config=cfg,
        )
        if bundle.spec_fingerprint != spec_fingerprint(spec):
            report.criteria["spec fingerprint"] = (False, "bundle was solved for another spec")
            return report

        reach = reachable_cells(spec, bundle)
        index = self._stage_checks(spec, bundle, reach, report)
        self._deviation_checks(spec, bundle, reach, report, index)
        self._simulation_checks(spec, bundle, reach, report)
        self._history_checks(spec, bundle, report)

        failed_on_path = [c for c in report.cells if c.failed and c.on_path]
        report.criteria["failed cells on path"] = (
            not failed_on_path, f"{len(failed_on_path)} of {len(bundle.failed_cells())} failed cells reachable")
        self.logger.info(f"verification {'passed' if report.passed else 'failed'} for {spec.name}")
        return report

    def _stage_checks(self, spec, bundle, reach, report) -> Dict[Tuple[int, int], CellCheck]:
        cfg = self.config
        index = {}
        for t in range(1, spec.horizon + 1):
            sweep = bundle.stages[t]
            continuation = bundle.continuation(t)
            failed = set(sweep.failed)
            for cell in range(sweep.support.num_cells):
                b = sweep.support.state(cell)
                strategy, update = sweep.strategies[cell], sweep.updates[cell]
                residual = consistency_residual(spec, strategy, b, update) if t < spec.horizon else 0.0
                gap = bne_gap(build_stage_game(spec, continuation, update, b), strategy)
                check = CellCheck(t, cell, b.c, cell in reach.get(t, set()), cell in failed, residual, gap)
                report.cells.append(check)
                index[(t, cell)] = check
        # a failed flag only excuses cells the profile never reaches
        certified = [c for c in report.cells if c.on_path or not c.failed]
        worst_res = max((c.consistency_residual for c in certified), default=0.0)
        worst_gap = max((c.bne_gap for c in certified), default=0.0)
        report.criteria["stage consistency residual"] = (
            worst_res <= cfg.consistency_tol, f"max {worst_res:.3e} <= {cfg.consistency_tol:.0e}")
        report.criteria["stage BNE gap"] = (worst_gap <= cfg.bne_tol, f"max {worst_gap:.3e} <= {cfg.bne_tol:.0e}")
        return index

    def _deviation_checks(self, spec, bundle, reach, report, index) -> None:
        cfg = self.config

        def run(n: int) -> DeviationValues:
            return deviation_mdp_best_response(spec, bundle, n, reach)

        try:
            if cfg.workers > 1:
                with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
                    results = list(pool.map(run, spec.agents))
            else:
                results = [run(n) for n in spec.agents]
        except ReachableFailedCellError as e:
            report.criteria["deviation gap"] = (False, str(e))
            return
        for dv in results:
            for t in range(1, spec.horizon + 1):
                gaps = dv.gaps(t)
                mismatch = np.abs(dv.follow[t] - bundle.stages[t].values[dv.agent].values)
                for cell in range(gaps.shape[0]):
                    check = index[(t, cell)]
                    check.deviation_gap = max(check.deviation_gap, float(gaps[cell].max()))
                    check.value_mismatch = max(check.value_mismatch, float(mismatch[cell].max()))
        worst = report.max_deviation_gap(on_path=True)
        mismatch = max((c.value_mismatch for c in report.cells if c.on_path), default=0.0)
        report.criteria["deviation gap"] = (worst <= cfg.eps_total, f"max on-path {worst:.3e} <= {cfg.eps_total:.0e}")
        report.criteria["value tables"] = (mismatch <= cfg.eps_total,
                                           f"max on-path |V - V(lambda)| {mismatch:.3e} <= {cfg.eps_total:.0e}")

    def _simulation_checks(self, spec, bundle, reach, report) -> None:
        cfg = self.config
        if cfg.simulation_samples <= 1 or cfg.simulation_cells <= 0:
            report.notes.append("simulation check skipped")
            return
        if not report.exact:
            report.notes.append("grid bundle: rollouts also measure the interpolation error of the value tables")
        rng = np.random.default_rng(cfg.seed)
        failed = set(bundle.stages[1].failed)
        candidates = sorted(c for c in reach[1] if c not in failed)
        picks = rng.choice(candidates, size=min(cfg.simulation_cells, len(candidates)), replace=False)
        for cell in sorted(int(c) for c in picks):
            for n in spec.agents:
                for x in range(spec.local_size(n, 1)):
                    mean, stderr = simulate_value(spec, bundle, 1, cell, n, x, cfg.simulation_samples, rng)
                    tab = float(bundle.stages[1].values[n].values[cell, x])
                    report.simulations.append(SimulationCheck(1, cell, n, x, mean, stderr, tab))
        bad = [s for s in report.simulations if not s.ok]
        report.criteria["value/simulation agreement"] = (
            not bad, f"{len(report.simulations) - len(bad)}/{len(report.simulations)} rollouts within "
                     f"{SIMULATION_SIGMAS:.0f} standard errors ({cfg.simulation_samples} samples)")

    def _history_checks(self, spec, bundle, report) -> None:
        cfg = self.config
        profile = BundleProfile(spec, bundle)
        try:
            consistency = check_consistency(spec, profile, cfg)
        except EnumerationBudgetError as e:
            report.notes.append(f"history consistency check skipped: {e}")
        else:
            report.consistency = consistency
            detail = (f"bayes {consistency.max_bayes_residual:.3e}, marginal {consistency.max_marginal_residual:.3e}, "
                      f"{consistency.support_violations} support violations over {consistency.histories_checked} "
                      f"histories" + ("" if consistency.exhaustive else f" (sampled, coverage {consistency.coverage:.2%})"))
            report.criteria["belief consistency"] = (consistency.passed(cfg.consistency_tol, cfg.marginal_tol), detail)

        for n in spec.agents:
            try:
                gap, _ = exhaustive_deviation_gap(spec, profile, n, cfg.trajectory_budget)
            except EnumerationBudgetError as e:
                report.notes.append(f"exhaustive deviation check for agent {n + 1} skipped: {e}")
                continue
            report.exhaustive_gaps[n] = gap
        if report.exhaustive_gaps:
            worst = max(report.exhaustive_gaps.values())
            detail = f"max {worst:.3e} over agents {sorted(k + 1 for k in report.exhaustive_gaps)}"
            if report.exact:
                report.criteria["exhaustive behavioral deviation"] = (worst <= cfg.eps_total, detail)
            else:
                report.notes.append(f"exhaustive behavioral deviation (informational on grids): {detail}")


def verify_cib_pbe(spec: GameSpec, bundle: EquilibriumBundle,
                   config: Optional[VerifyConfig] = None) -> VerificationReport:
    return Verifier(config).verify(spec, bundle)
