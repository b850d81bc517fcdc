import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, List, Sequence, Tuple, Union

import numpy as np

from cibsolver.managers.beliefmanager import BeliefVector
from cibsolver.managers.dpmanager import EquilibriumBundle
from cibsolver.managers.modelmanager import NO_OBSERVATION, NO_PUBLIC_STATE, GameSpec, freeze

logger = logging.getLogger("MacModel")

BAND = 1e-3

Belief2 = Union[BeliefVector, Sequence[float]]


@dataclass(frozen=True)
class MacParams:
    """Two-user collision channel: arrival probability p, dropping cost c, horizon."""
    p: float = 0.5
    c: float = 2.0
    horizon: int = 2

    def __post_init__(self) -> None:
        if not 0.0 < self.p < 1.0:
            raise ValueError(f"arrival probability must lie in (0, 1), got {self.p}")
        if self.c < 0.0:
            raise ValueError(f"dropping cost must be >= 0, got {self.c}")
        if self.horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {self.horizon}")

    @property
    def cp(self) -> float:
        return self.c * self.p

    @property
    def c_star(self) -> float:
        return (1.0 + self.cp) / (2.0 + self.cp)


def mac_spec(params: MacParams = MacParams()) -> GameSpec:
    """
    Binary queues, transmit (1) or stay silent (0); only a full queue may
    transmit. A lone transmission empties the queue, a collision keeps both
    packets, and a new packet arrives with probability p into a buffer of one.
    """
    T, p = params.horizon, params.p
    states, acts = ("0", "1"), ("0", "1")

    adm = np.array([[True, False], [True, True]])
    kernels, utilities = [], []
    for n in range(2):
        kernel = np.zeros((2, 2, 2, 2))
        util = np.zeros((1, 2, 2, 2, 2))
        for x_own, x_other, a_own, a_other in np.ndindex(2, 2, 2, 2):
            x, a = [0, 0], [0, 0]
            x[n], x[1 - n], a[n], a[1 - n] = x_own, x_other, a_own, a_other
            remaining = x_own - a_own * (1 - a_other)
            util[(0,) + tuple(x) + tuple(a)] = (a_own ^ a_other) - params.cp * float(remaining == 1)
            if adm[x_own, a_own]:
                kernel[(x_own,) + tuple(a)] = [0.0, 1.0] if remaining == 1 else [1.0 - p, p]
        kernels.append(kernel)
        utilities.append(util)

    spec = GameSpec(
        name="mac",
        horizon=T,
        num_agents=2,
        public_states=tuple((NO_PUBLIC_STATE,) for _ in range(T)),
        local_states=tuple(tuple(states for _ in range(T)) for _ in range(2)),
        actions=tuple(tuple(acts for _ in range(T)) for _ in range(2)),
        observations=tuple(tuple((NO_OBSERVATION,) for _ in range(T - 1)) for _ in range(2)),
        admissible=tuple(tuple(adm.copy() for _ in range(T)) for _ in range(2)),
        local_kernel=tuple(tuple(kernels[n].copy() for _ in range(T - 1)) for n in range(2)),
        obs_kernel=tuple(tuple(np.ones((2, 2, 2, 1)) for _ in range(T - 1)) for _ in range(2)),
        public_kernel=tuple(np.ones((1, 2, 2, 1)) for _ in range(T - 1)),
        utility=tuple(tuple(utilities[n].copy() for _ in range(T)) for n in range(2)),
        initial_local=(np.array([0.5, 0.5]), np.array([0.5, 0.5])),
        initial_public=np.ones(1),
    )
    return freeze(spec)


def _full(pi: Belief2) -> Tuple[float, float]:
    """Probabilities that each queue is full."""
    if isinstance(pi, BeliefVector):
        return float(pi[0][1]), float(pi[1][1])
    return float(pi[0]), float(pi[1])


def mac_beta2_closed_form(pi: Belief2, params: MacParams = MacParams()) -> Tuple[float, float]:
    """Last-stage transmission probabilities of full queues."""
    p1, p2 = _full(pi)
    cs = params.c_star
    if p1 < cs and p2 < cs:
        return 1.0, 1.0
    if p1 < cs <= p2:
        return 0.0, 1.0
    if p2 < cs <= p1:
        return 1.0, 0.0
    return cs / p1, cs / p2


def mac_value2_closed_form(x: int, pi: Belief2, params: MacParams = MacParams(), agent: int = 0) -> float:
    """Last-stage value of one agent with local state x."""
    full = _full(pi)
    beta = mac_beta2_closed_form(pi, params)
    # probability that the other agent transmits
    s = full[1 - agent] * beta[1 - agent]
    if x == 0:
        return s
    return max(1.0 - s * (1.0 + params.cp), s - params.cp)


def mac_belief_update_closed_form(pi_n: float, beta_n: float, a: Tuple[int, int],
                                  params: MacParams = MacParams()) -> float:
    """Probability that agent n's queue is full next slot; a = (own action, other action)."""
    p = params.p
    own, other = a
    if own == 1:
        return 1.0 if other == 1 else p
    den = 1.0 - pi_n * beta_n
    if den <= 0.0:
        return p + pi_n * (1.0 - p)
    return (p + pi_n * (1.0 - p - beta_n)) / den


def in_boundary_band(pi: Belief2, params: MacParams = MacParams(), band: float = BAND) -> bool:
    return any(abs(v - params.c_star) <= band for v in _full(pi))


# ---------------------------------------------------------------------- #
# Surfaces
# ---------------------------------------------------------------------- #
def mac_surface_rows(bundle: EquilibriumBundle, t: int) -> List[List[Any]]:
    sweep = bundle.stages[t]
    rows = []
    for cell, b in enumerate(sweep.support.cells()):
        probs = sweep.strategies[cell].probs
        rows.append([cell, repr(float(b.pi[0][1])), repr(float(b.pi[1][1])),
                     repr(float(b.pi_hat[0][1])), repr(float(b.pi_hat[1][1])),
                     repr(float(probs[0][1, 1])), repr(float(probs[1][1, 1])),
                     *(repr(float(sweep.values[n].values[cell, x])) for n in range(2) for x in range(2)),
                     int(sweep.converged[cell])])
    return rows


def write_mac_surfaces(bundle: EquilibriumBundle, out_dir: Any) -> List[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for t in sorted(bundle.stages):
        path = out / f"mac_surfaces_t{t}.csv"
        with path.open("w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["cell", "pi1", "pi2", "pihat1", "pihat2", "beta1", "beta2",
                             "V1_x0", "V1_x1", "V2_x0", "V2_x1", "converged"])
            writer.writerows(mac_surface_rows(bundle, t))
        paths.append(path)
    return paths


def write_closed_form_comparison(bundle: EquilibriumBundle, params: MacParams, out_dir: Any) -> Tuple[Path, float, float]:
    """Compare the last stage with the closed forms; returns (path, max beta error, max value error) off the band."""
    T = params.horizon
    sweep = bundle.stages[T]
    path = Path(out_dir) / f"mac_closed_form_t{T}.csv"
    worst_beta = worst_value = 0.0
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["cell", "pi1", "pi2", "beta1", "beta2", "beta1_closed", "beta2_closed",
                         "V1_x0", "V1_x0_closed", "V1_x1", "V1_x1_closed", "in_band"])
        for cell, b in enumerate(sweep.support.cells()):
            probs = sweep.strategies[cell].probs
            beta = (float(probs[0][1, 1]), float(probs[1][1, 1]))
            closed = mac_beta2_closed_form(b.pi, params)
            values = [float(sweep.values[0].values[cell, x]) for x in range(2)]
            closed_values = [mac_value2_closed_form(x, b.pi, params, agent=0) for x in range(2)]
            band = in_boundary_band(b.pi, params)
            if not band:
                for n in range(2):
                    # a full queue that never occurs carries no equilibrium restriction
                    if b.pi[n][1] > 0:
                        worst_beta = max(worst_beta, abs(beta[n] - closed[n]))
                worst_value = max(worst_value, max(abs(v - c) for v, c in zip(values, closed_values)))
            writer.writerow([cell, repr(float(b.pi[0][1])), repr(float(b.pi[1][1])),
                             repr(beta[0]), repr(beta[1]), repr(closed[0]), repr(closed[1]),
                             repr(values[0]), repr(closed_values[0]), repr(values[1]), repr(closed_values[1]),
                             int(band)])
    logger.info(f"closed-form comparison at t={T}: max beta error {worst_beta:.3e}, "
                f"max value error {worst_value:.3e}")
    return path, worst_beta, worst_value
