import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING, List, Optional, Sequence, Tuple

import numpy as np

from cibsolver.managers.modelmanager import GameSpec

if TYPE_CHECKING:
    from cibsolver.managers.stagemanager import StrategySlice

logger = logging.getLogger("BeliefEngine")

NORMALIZATION_TOL = 1e-12
ORACLE_BUDGET = 10 ** 7


class ImpossibleObservationError(RuntimeError):
    """Raised when an observation/action pair has probability zero under the prior."""
    def __init__(self, agent: int, t: int, y: Sequence[int], a: Sequence[int]) -> None:
        super().__init__(f"impossible observation for agent {agent + 1} at t={t} "
                         f"(y={tuple(y)}, a={tuple(a)})")
        self.agent = agent
        self.t = t
        self.y = tuple(y)
        self.a = tuple(a)


class ImpossibleConditioningError(RuntimeError):
    """Raised when the oracle is asked to condition on a probability-zero event."""


class EnumerationBudgetError(RuntimeError):
    """Raised when an exhaustive enumeration would exceed its budget."""
    def __init__(self, count: int, budget: int, what: str = "trajectories") -> None:
        super().__init__(f"enumeration of {count} {what} exceeds budget {budget}")
        self.count = count
        self.budget = budget


@dataclass(frozen=True, eq=False)
class BeliefVector:
    """Product-form belief: one distribution over local states per agent."""
    t: int
    marginals: Tuple[np.ndarray, ...]

    @classmethod
    def of(cls, t: int, marginals: Sequence[Sequence[float]], renormalize: bool = True) -> "BeliefVector":
        out = []
        for p in marginals:
            p = np.asarray(p, dtype=float).copy()
            total = p.sum()
            if (p < 0).any() or abs(total - 1.0) > 1e-9:
                raise ValueError(f"not a probability vector: {p}")
            if renormalize and total != 1.0:
                p /= total
            p.flags.writeable = False
            out.append(p)
        return cls(t, tuple(out))

    @property
    def num_agents(self) -> int:
        return len(self.marginals)

    def __getitem__(self, n: int) -> np.ndarray:
        return self.marginals[n]

    def joint(self) -> np.ndarray:
        out = self.marginals[0]
        for p in self.marginals[1:]:
            out = np.multiply.outer(out, p)
        return out

    def coords(self) -> np.ndarray:
        return np.concatenate(self.marginals)

    def max_abs_diff(self, other: "BeliefVector") -> float:
        return float(max(np.abs(p - q).max() for p, q in zip(self.marginals, other.marginals)))

    def swapped(self) -> "BeliefVector":
        return BeliefVector(self.t, tuple(reversed(self.marginals)))

    def __repr__(self) -> str:
        parts = ", ".join(np.array2string(p, precision=6) for p in self.marginals)
        return f"BeliefVector(t={self.t}, [{parts}])"


@dataclass(frozen=True, eq=False)
class CIBState:
    """Common-information state b_t = (c_t, pi_t, pi_hat_t)."""
    c: int
    pi: BeliefVector
    pi_hat: BeliefVector

    def __post_init__(self) -> None:
        if self.pi.t != self.pi_hat.t:
            raise ValueError(f"belief time mismatch: {self.pi.t} != {self.pi_hat.t}")

    @property
    def t(self) -> int:
        return self.pi.t

    def coords(self) -> np.ndarray:
        return np.concatenate([[float(self.c)], self.pi.coords(), self.pi_hat.coords()])

    def swapped(self) -> "CIBState":
        return CIBState(self.c, self.pi.swapped(), self.pi_hat.swapped())


def prior_belief(spec: GameSpec) -> BeliefVector:
    return BeliefVector.of(1, spec.initial_local)


def initial_state(spec: GameSpec, c: int = 0) -> CIBState:
    prior = prior_belief(spec)
    return CIBState(c, prior, prior)


def uniform_belief(spec: GameSpec, t: int) -> BeliefVector:
    return BeliefVector.of(t, [np.full(k, 1.0 / k) for k in spec.local_shape(t)])


# ---------------------------------------------------------------------- #
# Per-agent Bayes step
# ---------------------------------------------------------------------- #
def _agent_step(spec: GameSpec, n: int, t: int, prior: np.ndarray, y_n: int,
                a: Sequence[int], weights: Optional[np.ndarray] = None
                ) -> Tuple[Optional[np.ndarray], float]:
    """
    One Bayes step for agent n's local state.

    Numerator sum_x p(x'; x, a) q(y; x, a) 1{a^n admissible at x} w(x) prior(x);
    returns (posterior over X^n_{t+1}, denominator), posterior None on a zero
    denominator.
    """
    idx = (slice(None),) + tuple(a)
    q = spec.obs_kernel[n][t - 1][idx][:, y_n]
    w = q * spec.admissible[n][t - 1][:, a[n]] * prior
    if weights is not None:
        live = weights[w > 0]
        # a weight constant over live types cancels; skipping it keeps pooled updates bitwise signaling-free
        if not (live.size and live[0] > 0 and (live == live[0]).all()):
            w = w * weights
    den = float(w.sum())
    if den <= 0.0:
        return None, den
    post = w @ spec.local_kernel[n][t - 1][idx]
    return post / post.sum(), den


def _check_step(spec: GameSpec, t: int) -> None:
    if not 1 <= t < spec.horizon:
        raise ValueError(f"no belief update from t={t} (horizon {spec.horizon})")


def signaling_free_step(spec: GameSpec, pi_hat: BeliefVector, y: Sequence[int],
                        a: Sequence[int], on_impossible: str = "raise") -> BeliefVector:
    """
    Strategy-independent update pi_hat_t -> pi_hat_{t+1}.

    on_impossible="uniform" restarts an agent whose observation is impossible
    under pi_hat from the uniform prior; such pairs are reached only from types
    outside the signaling-free support.
    """
    t = pi_hat.t
    _check_step(spec, t)
    out = []
    for n in spec.agents:
        post, _ = _agent_step(spec, n, t, pi_hat[n], y[n], a)
        if post is None:
            post = _impossible(spec, n, t, y, a, on_impossible)
        out.append(post)
    return BeliefVector.of(t + 1, out)


def _impossible(spec: GameSpec, n: int, t: int, y: Sequence[int], a: Sequence[int],
                on_impossible: str) -> np.ndarray:
    if on_impossible == "uniform":
        k = spec.local_size(n, t)
        post, _ = _agent_step(spec, n, t, np.full(k, 1.0 / k), y[n], a)
        if post is not None:
            return post
    elif on_impossible != "raise":
        raise ValueError(f"unknown on_impossible mode: {on_impossible}")
    raise ImpossibleObservationError(n, t, y, a)


def consistent_update(spec: GameSpec, strategy: "StrategySlice", b: CIBState,
                      y: Sequence[int], a: Sequence[int],
                      on_impossible: str = "raise") -> BeliefVector:
    """
    Bayes update of pi_t weighted by the strategy's action probabilities.

    On a zero denominator the agent falls back to the signaling-free update.
    The public state c_t does not enter the formula.
    """
    t = b.t
    _check_step(spec, t)
    out = []
    for n in spec.agents:
        post, _ = _agent_step(spec, n, t, b.pi[n], y[n], a, strategy.probs[n][:, a[n]])
        if post is None:
            post, _ = _agent_step(spec, n, t, b.pi_hat[n], y[n], a)
        if post is None:
            post = _impossible(spec, n, t, y, a, on_impossible)
        out.append(post)
    return BeliefVector.of(t + 1, out)


# ---------------------------------------------------------------------- #
# Exhaustive joint oracle
# ---------------------------------------------------------------------- #
@dataclass(frozen=True, eq=False)
class TrajectoryDistribution:
    """
    Distribution over joint local-state trajectories x_{1:t}.

    Axis (s - 1) * N + k holds x^k_s.
    """
    t: int
    num_agents: int
    probs: np.ndarray

    def axis(self, s: int, k: int) -> int:
        return (s - 1) * self.num_agents + k

    def marginal(self, s: int, k: int) -> np.ndarray:
        keep = self.axis(s, k)
        return self.probs.sum(axis=tuple(i for i in range(self.probs.ndim) if i != keep))

    def state_marginal(self, s: int) -> np.ndarray:
        keep = {self.axis(s, k) for k in range(self.num_agents)}
        return self.probs.sum(axis=tuple(i for i in range(self.probs.ndim) if i not in keep))

    def agent_trajectories(self, k: int) -> np.ndarray:
        keep = {self.axis(s, k) for s in range(1, self.t + 1)}
        return self.probs.sum(axis=tuple(i for i in range(self.probs.ndim) if i not in keep))


def trajectory_count(spec: GameSpec, t: int) -> int:
    count = 1
    for s in range(1, t + 1):
        count *= int(np.prod(spec.local_shape(s)))
    return count


def _expand(factor: np.ndarray, ndim: int, axes: Sequence[int]) -> np.ndarray:
    shape = [1] * ndim
    for ax, size in zip(axes, factor.shape):
        shape[ax] = size
    return factor.reshape(shape)


def joint_bayes_oracle(spec: GameSpec, actions: Sequence[Sequence[int]],
                       observations: Sequence[Sequence[int]],
                       own: Optional[Tuple[int, Sequence[int]]] = None,
                       budget: int = ORACLE_BUDGET) -> TrajectoryDistribution:
    """
    Signaling-free posterior over x_{1:t} by exhaustive enumeration.

    Actions are open-loop inputs: each step multiplies the observation
    likelihood, the admissibility indicator and the local transition.
    ``own=(n, x^n_{1:t})`` additionally conditions on agent n's trajectory.
    """
    if len(actions) != len(observations):
        raise ValueError("actions and observations must have the same length")
    t = len(actions) + 1
    if t > spec.horizon:
        raise ValueError(f"history longer than horizon {spec.horizon}")
    count = trajectory_count(spec, t)
    if count > budget:
        raise EnumerationBudgetError(count, budget)

    N = spec.num_agents
    probs = BeliefVector.of(1, spec.initial_local).joint()
    for s in range(1, t):
        a, y = tuple(actions[s - 1]), tuple(observations[s - 1])
        ndim = probs.ndim + N
        probs = probs.reshape(probs.shape + (1,) * N)
        for k in spec.agents:
            idx = (slice(None),) + a
            q = spec.obs_kernel[k][s - 1][idx][:, y[k]]
            adm = spec.admissible[k][s - 1][:, a[k]]
            factor = (q * adm)[:, None] * spec.local_kernel[k][s - 1][idx]
            probs = probs * _expand(factor, ndim, ((s - 1) * N + k, s * N + k))

    if own is not None:
        n, traj = own
        if len(traj) != t:
            raise ValueError(f"own trajectory must have length {t}")
        for s, x in enumerate(traj, start=1):
            onehot = np.zeros(spec.local_size(n, s))
            onehot[x] = 1.0
            probs = probs * _expand(onehot, probs.ndim, ((s - 1) * N + n,))

    total = probs.sum()
    if total <= 0.0:
        raise ImpossibleConditioningError(
            f"conditioning event has probability zero at t={t} (actions={list(actions)}, "
            f"observations={list(observations)}, own={own})")
    return TrajectoryDistribution(t, N, probs / total)
