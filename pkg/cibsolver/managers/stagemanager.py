import hashlib
import itertools
import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Protocol, Sequence, Tuple

import numpy as np
from scipy.optimize import brentq, least_squares

from cibsolver.managers.beliefmanager import (
    BeliefVector,
    CIBState,
    consistent_update,
    signaling_free_step,
)
from cibsolver.managers.configmanager import SolverConfig
from cibsolver.managers.modelmanager import GameSpec

STRATEGY_TOL = 1e-9
TIE_TOL = 1e-12
SUPPORT_TOL = 1e-12

Key = Tuple[Tuple[int, ...], Tuple[int, ...]]


# ---------------------------------------------------------------------- #
# Types
# ---------------------------------------------------------------------- #
@dataclass(frozen=True, eq=False)
class StrategySlice:
    """lambda_t restricted to one b_t: probs[n][x, a] over admissible actions."""
    probs: Tuple[np.ndarray, ...]

    @classmethod
    def uniform(cls, spec: GameSpec, t: int) -> "StrategySlice":
        out = []
        for n in spec.agents:
            adm = spec.admissible[n][t - 1].astype(float)
            out.append(adm / adm.sum(axis=1, keepdims=True))
        return cls(tuple(out))

    @classmethod
    def pooled(cls, spec: GameSpec, t: int, dists: Sequence[np.ndarray]) -> "StrategySlice":
        return cls(tuple(np.tile(np.asarray(d, dtype=float), (spec.local_size(n, t), 1))
                         for n, d in enumerate(dists)))

    @property
    def num_agents(self) -> int:
        return len(self.probs)

    def pooled_variation(self) -> float:
        return float(max(np.abs(p - p[:1]).max() for p in self.probs))

    def max_abs_diff(self, other: "StrategySlice") -> float:
        return float(max(np.abs(p - q).max() for p, q in zip(self.probs, other.probs)))

    def mix(self, other: "StrategySlice", alpha: float) -> "StrategySlice":
        return StrategySlice(tuple((1 - alpha) * p + alpha * q for p, q in zip(self.probs, other.probs)))

    def with_agent(self, n: int, probs: np.ndarray) -> "StrategySlice":
        out = list(self.probs)
        out[n] = probs
        return StrategySlice(tuple(out))

    def swapped(self) -> "StrategySlice":
        return StrategySlice(tuple(reversed(self.probs)))

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.probs])


@dataclass(frozen=True, eq=False)
class UpdateSlice:
    """psi_t and psi_hat_t restricted to one b_t, keyed by (y_t, a_t)."""
    t: int
    beliefs: Dict[Key, BeliefVector]
    signaling_free: Dict[Key, BeliefVector]

    def __contains__(self, key: Key) -> bool:
        return key in self.beliefs

    def __getitem__(self, key: Key) -> BeliefVector:
        return self.beliefs[key]

    def keys(self) -> List[Key]:
        return list(self.beliefs)

    def max_abs_diff(self, other: "UpdateSlice") -> float:
        if set(self.beliefs) != set(other.beliefs):
            return float("inf")
        return max((self.beliefs[k].max_abs_diff(other.beliefs[k]) for k in self.beliefs), default=0.0)

    def swapped(self) -> "UpdateSlice":
        def swap_key(key: Key) -> Key:
            return tuple(reversed(key[0])), tuple(reversed(key[1]))
        return UpdateSlice(self.t,
                           {swap_key(k): v.swapped() for k, v in self.beliefs.items()},
                           {swap_key(k): v.swapped() for k, v in self.signaling_free.items()})


@dataclass(frozen=True, eq=False)
class StageGame:
    """
    Bayesian stage game at b_t.

    payoffs[n] has shape (X^1..X^N, A^1..A^N) and holds the expected flow plus
    continuation payoff of agent n for every joint type and joint action.
    """
    t: int
    b: CIBState
    payoffs: Tuple[np.ndarray, ...]
    admissible: Tuple[np.ndarray, ...]

    @property
    def prior(self) -> BeliefVector:
        return self.b.pi

    @property
    def num_agents(self) -> int:
        return len(self.payoffs)


@dataclass(frozen=True)
class BestResponse:
    values: np.ndarray
    actions: List[List[int]]

    def pure(self, shape: Tuple[int, int]) -> np.ndarray:
        out = np.zeros(shape)
        for x, acts in enumerate(self.actions):
            out[x, acts[0]] = 1.0
        return out


@dataclass
class StageResult:
    strategy: StrategySlice
    update: UpdateSlice
    gap: float
    residual: float
    converged: bool
    method: str
    iterations: int = 0
    candidates: List[StrategySlice] = field(default_factory=list)

    def swapped(self) -> "StageResult":
        return replace(self, strategy=self.strategy.swapped(), update=self.update.swapped(),
                       candidates=[c.swapped() for c in self.candidates])


class NoFixedPointError(RuntimeError):
    """Raised when no certified stage fixed point is found; carries the best candidate."""
    def __init__(self, t: int, best: StageResult) -> None:
        super().__init__(f"no fixed point found at t={t} (best gap {best.gap:.3e}, "
                         f"residual {best.residual:.3e})")
        self.t = t
        self.best = best


class Continuation(Protocol):
    def evaluate(self, n: int, b: CIBState) -> np.ndarray:
        """Values of agent n at b over its local states."""
        ...


class ZeroContinuation:
    def __init__(self, spec: GameSpec, t: int) -> None:
        self.sizes = spec.local_shape(t)

    def evaluate(self, n: int, b: CIBState) -> np.ndarray:
        return np.zeros(self.sizes[n])


# ---------------------------------------------------------------------- #
# Update slices
# ---------------------------------------------------------------------- #
def feasible_pairs(spec: GameSpec, t: int) -> List[Key]:
    """(y, a) pairs with positive probability for some joint local state."""
    if t >= spec.horizon:
        return []
    pairs = []
    for a in spec.joint_action_profiles(t):
        idx = (slice(None),) + a
        for y in spec.joint_observation_profiles(t):
            if all((spec.obs_kernel[k][t - 1][idx][:, y[k]]
                    * spec.admissible[k][t - 1][:, a[k]]).any() for k in spec.agents):
                pairs.append((y, a))
    return pairs


def signaling_free_slice(spec: GameSpec, b: CIBState) -> Dict[Key, BeliefVector]:
    return {(y, a): signaling_free_step(spec, b.pi_hat, y, a, on_impossible="uniform")
            for y, a in feasible_pairs(spec, b.t)}


def compute_update_slice(spec: GameSpec, strategy: StrategySlice, b: CIBState,
                         sf: Optional[Dict[Key, BeliefVector]] = None) -> UpdateSlice:
    if sf is None:
        sf = signaling_free_slice(spec, b)
    beliefs = {key: consistent_update(spec, strategy, b, key[0], key[1], on_impossible="uniform")
               for key in sf}
    return UpdateSlice(b.t + 1, beliefs, sf)


def consistency_residual(spec: GameSpec, strategy: StrategySlice, b: CIBState,
                         update: UpdateSlice) -> float:
    """Max deviation of a stored update from the consistent update of the strategy."""
    fresh = compute_update_slice(spec, strategy, b)
    if set(fresh.beliefs) != set(update.beliefs):
        return float("inf")
    return fresh.max_abs_diff(update)


# ---------------------------------------------------------------------- #
# Stage game
# ---------------------------------------------------------------------- #
def build_stage_game(spec: GameSpec, continuation: Optional[Continuation],
                     update: Optional[UpdateSlice], b: CIBState) -> StageGame:
    t = b.t
    N = spec.num_agents
    payoffs = [spec.utility[n][t - 1][b.c].astype(float) for n in spec.agents]
    if t < spec.horizon:
        if continuation is None:
            raise ValueError(f"missing continuation values for t={t + 1}")
        if update is None or update.t != t + 1:
            raise ValueError(f"update slice does not lead from t={t} to t={t + 1}")
        xshape = spec.local_shape(t)
        for y, a in update.keys():
            idx = (slice(None),) + a
            lik = np.ones(xshape)
            for k in spec.agents:
                q = spec.obs_kernel[k][t - 1][idx][:, y[k]]
                lik = lik * q.reshape(tuple(-1 if j == k else 1 for j in range(N)))
            pc = spec.public_kernel[t - 1][(b.c,) + a]
            for c2 in np.flatnonzero(pc):
                b2 = CIBState(int(c2), update.beliefs[(y, a)], update.signaling_free[(y, a)])
                for n in spec.agents:
                    ev = spec.local_kernel[n][t - 1][idx] @ continuation.evaluate(n, b2)
                    shaped = ev.reshape(tuple(-1 if j == n else 1 for j in range(N)))
                    payoffs[n][(Ellipsis,) + a] += pc[c2] * lik * shaped
    for p in payoffs:
        if not np.isfinite(p).all():
            raise ValueError(f"non-finite stage payoff at t={t}")
    adm = tuple(spec.admissible[n][t - 1] for n in spec.agents)
    return StageGame(t, b, tuple(payoffs), adm)


def type_action_payoffs(stage: StageGame, n: int, strategy: StrategySlice) -> np.ndarray:
    """Expected payoff of agent n for every (own type, own action) against the others."""
    N = stage.num_agents
    operands: List = [stage.payoffs[n], list(range(2 * N))]
    for k in range(N):
        if k == n:
            continue
        weights = stage.prior[k][:, None] * strategy.probs[k]
        operands += [weights, [k, N + k]]
    operands.append([n, N + n])
    return np.einsum(*operands)


def expected_payoff(stage: StageGame, n: int, x: int, a: int, strategy: StrategySlice) -> float:
    if not stage.admissible[n][x, a]:
        raise ValueError(f"action {a} is not admissible for agent {n + 1} at x={x}")
    return float(type_action_payoffs(stage, n, strategy)[x, a])


def best_response(stage: StageGame, n: int, strategy: StrategySlice) -> BestResponse:
    table = np.where(stage.admissible[n], type_action_payoffs(stage, n, strategy), -np.inf)
    values = table.max(axis=1)
    actions = [[int(a) for a in np.flatnonzero(row >= v - TIE_TOL * max(1.0, abs(v)))]
               for row, v in zip(table, values)]
    return BestResponse(values, actions)


def type_values(stage: StageGame, strategy: StrategySlice) -> List[np.ndarray]:
    """Per-agent, per-type expected payoff of the strategy slice."""
    return [(type_action_payoffs(stage, n, strategy) * strategy.probs[n]).sum(axis=1)
            for n in range(stage.num_agents)]


def bne_gap(stage: StageGame, strategy: StrategySlice) -> float:
    gap = 0.0
    for n in range(stage.num_agents):
        table = type_action_payoffs(stage, n, strategy)
        best = np.where(stage.admissible[n], table, -np.inf).max(axis=1)
        achieved = (table * strategy.probs[n]).sum(axis=1)
        gap = max(gap, float((best - achieved).max()))
    return gap


def pure_best_response_slice(stage: StageGame, strategy: StrategySlice) -> StrategySlice:
    return StrategySlice(tuple(best_response(stage, n, strategy).pure(strategy.probs[n].shape)
                               for n in range(stage.num_agents)))


def fill_null_types(stage: StageGame, strategy: StrategySlice) -> StrategySlice:
    """Give zero-probability types their (lowest-index) best response."""
    out = strategy
    for n in range(stage.num_agents):
        null = stage.prior[n] <= 0.0
        if not null.any():
            continue
        probs = out.probs[n].copy()
        br = best_response(stage, n, out).pure(probs.shape)
        probs[null] = br[null]
        out = out.with_agent(n, probs)
    return out


# ---------------------------------------------------------------------- #
# Normal-form equilibria
# ---------------------------------------------------------------------- #
def support_enumeration(A: np.ndarray, B: np.ndarray, tol: float = 1e-10
                        ) -> List[Tuple[np.ndarray, np.ndarray]]:
    """All equilibria of a bimatrix game with equal-size supports."""
    m, k = A.shape
    found = []
    for size in range(1, min(m, k) + 1):
        for rows in itertools.combinations(range(m), size):
            for cols in itertools.combinations(range(k), size):
                sigma2 = _indifference(A[np.ix_(rows, cols)])
                sigma1 = _indifference(B[np.ix_(rows, cols)].T)
                if sigma1 is None or sigma2 is None:
                    continue
                x = np.zeros(m)
                y = np.zeros(k)
                x[list(rows)] = sigma1
                y[list(cols)] = sigma2
                row_payoffs = A @ y
                col_payoffs = x @ B
                if row_payoffs.max() > row_payoffs[list(rows)].min() + tol:
                    continue
                if col_payoffs.max() > col_payoffs[list(cols)].min() + tol:
                    continue
                found.append((x, y))
    return found


def _indifference(M: np.ndarray) -> Optional[np.ndarray]:
    """Mixed strategy over M's columns making every row indifferent."""
    size = M.shape[0]
    system = np.zeros((size + 1, size + 1))
    system[:size, :size] = M
    system[:size, size] = -1.0
    system[size, :size] = 1.0
    rhs = np.zeros(size + 1)
    rhs[size] = 1.0
    try:
        sol = np.linalg.solve(system, rhs)
    except np.linalg.LinAlgError:
        return None
    probs = sol[:size]
    if (probs < -SUPPORT_TOL).any() or not np.isfinite(probs).all():
        return None
    probs = np.clip(probs, 0.0, None)
    return probs / probs.sum()


def iterated_best_response(payoffs: Sequence[np.ndarray], rng: np.random.Generator,
                           restarts: int, damping: float, max_iters: int,
                           tol: float) -> Optional[List[np.ndarray]]:
    """Damped best-response dynamics on a normal-form game; None when it fails."""
    N = len(payoffs)
    sizes = payoffs[0].shape

    def gap_and_br(sigma):
        gap, br = 0.0, []
        for n in range(N):
            vals = _normal_form_values(payoffs[n], sigma, n)
            gap = max(gap, float(vals.max() - vals @ sigma[n]))
            pure = np.zeros(sizes[n])
            pure[int(np.argmax(vals))] = 1.0
            br.append(pure)
        return gap, br

    starts = [[np.full(s, 1.0 / s) for s in sizes]]
    starts += [[rng.dirichlet(np.ones(s)) for s in sizes] for _ in range(restarts)]
    for sigma in starts:
        for _ in range(max_iters):
            gap, br = gap_and_br(sigma)
            if gap <= tol:
                return sigma
            sigma = [(1 - damping) * s + damping * b for s, b in zip(sigma, br)]
    return None


def _normal_form_values(u: np.ndarray, sigma: Sequence[np.ndarray], n: int) -> np.ndarray:
    operands: List = [u, list(range(len(sigma)))]
    for k, s in enumerate(sigma):
        if k != n:
            operands += [s, [k]]
    operands.append([n])
    return np.einsum(*operands)


def reduced_payoffs(stage: StageGame) -> List[np.ndarray]:
    """Complete-information payoffs R^n(a) = E_{x ~ pi}[U^n(x, a)]."""
    N = stage.num_agents
    out = []
    for n in range(N):
        operands: List = [stage.payoffs[n], list(range(2 * N))]
        for k in range(N):
            operands += [stage.prior[k], [k]]
        operands.append(list(range(N, 2 * N)))
        out.append(np.einsum(*operands))
    return out


def own_type_shift_residual(stage: StageGame) -> float:
    """
    How far payoffs are from depending on own type through an action-free shift.

    Zero means every pooled best response is a best response for every type.
    """
    N = stage.num_agents
    worst = 0.0
    for n in range(N):
        u = stage.payoffs[n]
        ref = u[(Ellipsis,) + (0,) * N][..., None]
        flat = u.reshape(u.shape[:N] + (-1,)) - ref.reshape(u.shape[:N] + (1,))
        diff = flat - flat.take([0], axis=n)
        worst = max(worst, float(np.abs(diff).max()))
    return worst


def _state_independent_actions(stage: StageGame) -> bool:
    return all((adm == adm[:1]).all() for adm in stage.admissible)


# ---------------------------------------------------------------------- #
# Solver
# ---------------------------------------------------------------------- #
def cell_seed(seed: int, t: int, b: CIBState) -> int:
    digest = hashlib.sha256(f"{seed}:{t}:".encode() + b.coords().tobytes()).digest()
    return int.from_bytes(digest[:8], "little")


def _selection_key(stage: StageGame, strategy: StrategySlice, prefer_symmetric: bool):
    support = 0
    for n, p in enumerate(strategy.probs):
        support += int((p[stage.prior[n] > 0] > SUPPORT_TOL).sum())
    uniform = [a / a.sum(axis=1, keepdims=True) for a in (adm.astype(float) for adm in stage.admissible)]
    distance = float(sum(((p - u) ** 2).sum() for p, u in zip(strategy.probs, uniform)))
    asym = 0
    if prefer_symmetric:
        asym = int(strategy.probs[0].shape != strategy.probs[1].shape
                   or np.abs(strategy.probs[0] - strategy.probs[1]).max() > STRATEGY_TOL)
    return (asym, -support, round(distance, 12), tuple(np.round(strategy.flat(), 12)))


class StageSolver:
    """
    Solves the stage fixed point: lambda is a BNE of the stage game built from
    psi, and psi is the consistent update of lambda.

    Search order for one cell:
      1. the uniform slice, when it already certifies;
      2. exact equilibria of the stage game for the current psi (pooled
         reduced game, or support enumeration on the induced normal form of a
         two-agent game), alternated with psi under damping;
      3. damped iterated best response from the uniform slice and from
         ``restarts`` seeded random interior slices;
      4. for small parametrizations, a scan of the strategy cube refined on the
         indifference conditions.
    """

    def __init__(self, config: Optional[SolverConfig] = None) -> None:
        self.config = config or SolverConfig()
        self.logger = logging.getLogger("StageSolver")

    # ------------------------------------------------------------------ #
    # Public API
    # ------------------------------------------------------------------ #
    def solve(self, spec: GameSpec, continuation: Optional[Continuation], b: CIBState) -> StageResult:
        cfg = self.config
        if cfg.symmetric_mode and spec.is_symmetric():
            key0 = tuple(b.pi[0]) + tuple(b.pi_hat[0])
            key1 = tuple(b.pi[1]) + tuple(b.pi_hat[1])
            if key0 > key1:
                return self._solve(spec, continuation, b.swapped(), True).swapped()
            return self._solve(spec, continuation, b, key0 == key1)
        return self._solve(spec, continuation, b, False)

    def certify(self, spec: GameSpec, continuation: Optional[Continuation], b: CIBState,
                strategy: StrategySlice, sf: Optional[Dict[Key, BeliefVector]] = None
                ) -> Tuple[UpdateSlice, StageGame, float, float]:
        update = compute_update_slice(spec, strategy, b, sf)
        stage = build_stage_game(spec, continuation, update, b)
        residual = consistency_residual(spec, strategy, b, update) if update.beliefs else 0.0
        return update, stage, bne_gap(stage, strategy), residual

    def stage_equilibria(self, stage: StageGame, prefer_symmetric: bool = False) -> List[StrategySlice]:
        """Exact equilibria of a fixed stage game, in selection order."""
        cfg = self.config
        spec_shape = [adm.shape for adm in stage.admissible]
        found: List[StrategySlice] = []
        N = stage.num_agents
        if N == 1:
            base = StrategySlice(tuple(np.zeros(s) for s in spec_shape))
            found.append(pure_best_response_slice(stage, base))
        elif _state_independent_actions(stage) and own_type_shift_residual(stage) <= TIE_TOL:
            for sigma in self._reduced_equilibria(stage):
                found.append(StrategySlice(tuple(np.tile(s, (shape[0], 1))
                                                 for s, shape in zip(sigma, spec_shape))))
        elif N == 2:
            found.extend(self._induced_equilibria(stage))
        found = [fill_null_types(stage, s) for s in found]
        unique: List[StrategySlice] = []
        for s in found:
            if bne_gap(stage, s) <= cfg.bne_tol and all(s.max_abs_diff(u) > STRATEGY_TOL for u in unique):
                unique.append(s)
        unique.sort(key=lambda s: _selection_key(stage, s, prefer_symmetric))
        return unique

    # ------------------------------------------------------------------ #
    # Internal: search phases
    # ------------------------------------------------------------------ #
    def _solve(self, spec: GameSpec, continuation: Optional[Continuation], b: CIBState,
               symmetric_cell: bool) -> StageResult:
        cfg = self.config
        t = b.t
        if t == spec.horizon:
            continuation = None
        sf = {} if t == spec.horizon else self._sf(spec, b)
        best: Optional[StageResult] = None
        candidates: List[StrategySlice] = []

        def record(strategy: StrategySlice, method: str, iterations: int) -> StageResult:
            nonlocal best
            update, stage, gap, residual = self.certify(spec, continuation, b, strategy, sf)
            ok = gap <= cfg.bne_tol and residual <= cfg.consistency_tol
            result = StageResult(strategy, update, gap, residual, ok, method, iterations)
            if best is None or (result.converged, -result.gap) > (best.converged, -best.gap):
                best = result
            return result

        uniform = StrategySlice.uniform(spec, t)
        result = record(uniform, "uniform", 0)
        if result.converged:
            return self._finish(result, candidates)

        result = self._alternate(spec, continuation, b, sf, symmetric_cell, record, candidates)
        if result is not None:
            return self._finish(result, candidates)

        rng = np.random.default_rng(cell_seed(cfg.seed, t, b))
        starts = [uniform] + [self._random_slice(spec, t, rng, symmetric_cell) for _ in range(cfg.restarts)]
        for i, start in enumerate(starts):
            result = self._damped(spec, continuation, b, sf, start, record)
            if result is not None:
                self.logger.debug(f"t={t}: damped best response converged (start {i})")
                return self._finish(result, candidates)

        if cfg.grid_fallback:
            result = self._scan(spec, continuation, b, sf, symmetric_cell, record)
            if result is not None:
                self.logger.debug(f"t={t}: strategy-cube scan succeeded")
                return self._finish(result, candidates)

        assert best is not None
        best.method = "failed"
        raise NoFixedPointError(t, best)

    def _finish(self, result: StageResult, candidates: List[StrategySlice]) -> StageResult:
        if self.config.enumerate:
            result.candidates = candidates
        return result

    def _sf(self, spec: GameSpec, b: CIBState) -> Dict[Key, BeliefVector]:
        return signaling_free_slice(spec, b)

    def _alternate(self, spec, continuation, b, sf, symmetric_cell, record, candidates
                   ) -> Optional[StageResult]:
        """Alternate exact stage equilibria with the consistent update, damped."""
        cfg = self.config
        strategy = StrategySlice.uniform(spec, b.t)
        for k in range(cfg.max_iters):
            update = compute_update_slice(spec, strategy, b, sf)
            stage = build_stage_game(spec, continuation, update, b)
            found = self.stage_equilibria(stage, symmetric_cell)
            if not found:
                return None
            if k == 0:
                candidates.extend(found)
                target = found[0]
            else:
                target = min(found, key=lambda s: s.max_abs_diff(strategy))
            result = record(target, "enumeration" if k == 0 else "alternation", k + 1)
            if result.converged:
                return result
            if target.max_abs_diff(strategy) < STRATEGY_TOL:
                return None
            if k >= cfg.stall_iters:
                return None
            strategy = strategy.mix(target, cfg.damping)
        return None

    def _damped(self, spec, continuation, b, sf, start, record) -> Optional[StageResult]:
        cfg = self.config
        strategy = start
        best_gap, since = np.inf, 0
        for k in range(cfg.max_iters):
            update = compute_update_slice(spec, strategy, b, sf)
            stage = build_stage_game(spec, continuation, update, b)
            gap = bne_gap(stage, strategy)
            if gap <= cfg.bne_tol:
                return record(strategy, "damped", k + 1)
            if gap < best_gap - 1e-15:
                best_gap, since = gap, 0
            else:
                since += 1
                if since >= cfg.stall_iters:
                    record(strategy, "damped", k + 1)
                    return None
            target = pure_best_response_slice(stage, strategy)
            nxt = strategy.mix(target, cfg.damping)
            if nxt.max_abs_diff(strategy) < STRATEGY_TOL:
                record(strategy, "damped", k + 1)
                return None
            strategy = nxt
        return None

    def _random_slice(self, spec: GameSpec, t: int, rng: np.random.Generator,
                      symmetric_cell: bool) -> StrategySlice:
        out = []
        for n in spec.agents:
            if symmetric_cell and n > 0:
                out.append(out[0].copy())
                continue
            adm = spec.admissible[n][t - 1]
            probs = np.zeros(adm.shape)
            for x in range(adm.shape[0]):
                acts = np.flatnonzero(adm[x])
                probs[x, acts] = rng.dirichlet(np.ones(len(acts)))
            out.append(probs)
        return StrategySlice(tuple(out))

    # ------------------------------------------------------------------ #
    # Internal: exact stage equilibria
    # ------------------------------------------------------------------ #
    def _reduced_equilibria(self, stage: StageGame) -> List[List[np.ndarray]]:
        R = reduced_payoffs(stage)
        adm = [a[0] for a in stage.admissible]
        if stage.num_agents == 2:
            rows, cols = np.flatnonzero(adm[0]), np.flatnonzero(adm[1])
            out = []
            for x, y in support_enumeration(R[0][np.ix_(rows, cols)], R[1][np.ix_(rows, cols)]):
                s1, s2 = np.zeros(len(adm[0])), np.zeros(len(adm[1]))
                s1[rows], s2[cols] = x, y
                out.append([s1, s2])
            return out
        rng = np.random.default_rng(cell_seed(self.config.seed, stage.t, stage.b))
        sigma = iterated_best_response(R, rng, self.config.restarts, self.config.damping,
                                       self.config.max_iters, self.config.bne_tol)
        return [] if sigma is None else [sigma]

    def _induced_equilibria(self, stage: StageGame) -> List[StrategySlice]:
        """Support enumeration on the induced normal form over positive-probability types."""
        types, pures = [], []
        for n in range(2):
            pos = [int(x) for x in np.flatnonzero(stage.prior[n] > 0)]
            choices = [np.flatnonzero(stage.admissible[n][x]) for x in pos]
            count = int(np.prod([len(c) for c in choices]))
            if count > self.config.max_induced_strategies:
                return []
            types.append(pos)
            pures.append(list(itertools.product(*choices)))

        A = np.zeros((len(pures[0]), len(pures[1])))
        B = np.zeros_like(A)
        p1, p2 = stage.prior[0], stage.prior[1]
        for i, s1 in enumerate(pures[0]):
            for j, s2 in enumerate(pures[1]):
                for x1, a1 in zip(types[0], s1):
                    for x2, a2 in zip(types[1], s2):
                        w = p1[x1] * p2[x2]
                        A[i, j] += w * stage.payoffs[0][x1, x2, a1, a2]
                        B[i, j] += w * stage.payoffs[1][x1, x2, a1, a2]

        out = []
        for sigma1, sigma2 in support_enumeration(A, B):
            probs = []
            for n, sigma in enumerate((sigma1, sigma2)):
                p = np.zeros(stage.admissible[n].shape)
                for weight, pure in zip(sigma, pures[n]):
                    for x, a in zip(types[n], pure):
                        p[x, a] += weight
                for x in range(p.shape[0]):
                    if x not in types[n]:
                        p[x, np.flatnonzero(stage.admissible[n][x])[0]] = 1.0
                probs.append(p)
            out.append(StrategySlice(tuple(probs)))
        return out

    # ------------------------------------------------------------------ #
    # Internal: strategy-cube scan
    # ------------------------------------------------------------------ #
    def _scan(self, spec, continuation, b, sf, symmetric_cell, record) -> Optional[StageResult]:
        cfg = self.config
        t = b.t
        base = StrategySlice.uniform(spec, t)
        free: List[Tuple[int, int, int, int]] = []
        for n in spec.agents:
            for x in range(spec.local_size(n, t)):
                acts = spec.admissible_actions(n, t, x)
                if len(acts) > 2:
                    return None
                if len(acts) == 2 and b.pi[n][x] > 0:
                    free.append((n, x, acts[0], acts[1]))
        d = len(free)
        if d == 0 or d > 3:
            return None

        def make(beta: np.ndarray) -> StrategySlice:
            probs = [p.copy() for p in base.probs]
            for (n, x, lo, hi), v in zip(free, beta):
                probs[n][x] = 0.0
                probs[n][x, lo], probs[n][x, hi] = 1.0 - v, v
            return StrategySlice(tuple(probs))

        def diffs(beta: np.ndarray) -> np.ndarray:
            strategy = make(np.clip(beta, 0.0, 1.0))
            update = compute_update_slice(spec, strategy, b, sf)
            stage = build_stage_game(spec, continuation, update, b)
            tables = {}
            out = np.zeros(d)
            for i, (n, x, lo, hi) in enumerate(free):
                if n not in tables:
                    tables[n] = type_action_payoffs(stage, n, strategy)
                out[i] = tables[n][x, hi] - tables[n][x, lo]
            return out

        def natural(beta: np.ndarray) -> np.ndarray:
            return beta - np.clip(beta + diffs(beta), 0.0, 1.0)

        per_axis = min(int(round(1.0 / cfg.scan_resolution)) + 1,
                       max(2, int(cfg.scan_points ** (1.0 / d))))
        axis = np.linspace(0.0, 1.0, per_axis)
        points = [np.array(p) for p in itertools.product(axis, repeat=d)]
        if symmetric_cell and d == 2 and free[0][1:] == free[1][1:]:
            points = [np.array([v, v]) for v in axis]
        values = [diffs(p) for p in points]

        seeds: List[np.ndarray] = []
        if d == 1:
            D = np.array([v[0] for v in values])
            if D[0] <= 0:
                seeds.append(np.array([0.0]))
            if D[-1] >= 0:
                seeds.append(np.array([1.0]))
            for i in np.flatnonzero(D[:-1] * D[1:] < 0):
                root = brentq(lambda v: diffs(np.array([v]))[0], axis[i], axis[i + 1], xtol=1e-15)
                seeds.append(np.array([root]))
        elif symmetric_cell and len(points) == per_axis:
            D = np.array([v[0] for v in values])
            if D[0] <= 0:
                seeds.append(np.array([0.0, 0.0]))
            if D[-1] >= 0:
                seeds.append(np.array([1.0, 1.0]))
            for i in np.flatnonzero(D[:-1] * D[1:] < 0):
                root = brentq(lambda v: diffs(np.array([v, v]))[0], axis[i], axis[i + 1], xtol=1e-15)
                seeds.append(np.array([root, root]))
        else:
            norms = [np.abs(p - np.clip(p + v, 0.0, 1.0)).max() for p, v in zip(points, values)]
            for i in np.argsort(norms, kind="stable")[:4]:
                fit = least_squares(natural, points[i], bounds=(0.0, 1.0),
                                    xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=200 * d)
                seeds.append(np.clip(fit.x, 0.0, 1.0))

        found = []
        for beta in seeds:
            strategy = make(beta)
            update = compute_update_slice(spec, strategy, b, sf)
            strategy = fill_null_types(build_stage_game(spec, continuation, update, b), strategy)
            result = record(strategy, "scan", len(points))
            if result.converged:
                found.append(result)
        if not found:
            return None
        stage = build_stage_game(spec, continuation, found[0].update, b)
        found.sort(key=lambda r: _selection_key(stage, r.strategy, symmetric_cell))
        return found[0]


def solve_bne_consistent(spec: GameSpec, continuation: Optional[Continuation], b: CIBState,
                         config: Optional[SolverConfig] = None) -> StageResult:
    return StageSolver(config).solve(spec, continuation, b)
