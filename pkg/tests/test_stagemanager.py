import itertools

import numpy as np
import pytest

from cibsolver.managers.beliefmanager import BeliefVector, CIBState, initial_state
from cibsolver.managers.configmanager import SolverConfig
from cibsolver.managers.macmanager import in_boundary_band, mac_beta2_closed_form, mac_value2_closed_form
from cibsolver.managers.modelmanager import random_spec
from cibsolver.managers.stagemanager import (
    StageSolver,
    StrategySlice,
    UpdateSlice,
    ZeroContinuation,
    best_response,
    bne_gap,
    build_stage_game,
    cell_seed,
    expected_payoff,
    iterated_best_response,
    solve_bne_consistent,
    support_enumeration,
    type_values,
)


def _mac_state(pi1, pi2, t=2):
    belief = BeliefVector.of(t, [[1 - pi1, pi1], [1 - pi2, pi2]])
    return CIBState(0, belief, belief)


def test_support_enumeration_matching_pennies():
    A = np.array([[1.0, -1.0], [-1.0, 1.0]])
    found = support_enumeration(A, -A)
    assert len(found) == 1
    x, y = found[0]
    assert x == pytest.approx([0.5, 0.5])
    assert y == pytest.approx([0.5, 0.5])


def test_support_enumeration_coordination_game():
    A = np.array([[2.0, 0.0], [0.0, 1.0]])
    found = support_enumeration(A, A.copy())
    assert len(found) == 3
    mixed = [x for x, _ in found if 0 < x[0] < 1]
    assert mixed[0] == pytest.approx([1 / 3, 2 / 3])


def test_best_response_dynamics_agrees_with_enumeration():
    # dominance-solvable: both settle on the second action
    A = np.array([[1.0, 0.0], [3.0, 2.0]])
    payoffs = [A, A.T.copy()]
    sigma = iterated_best_response(payoffs, np.random.default_rng(0), 4, 0.5, 1000, 1e-9)
    x, y = support_enumeration(*payoffs)[0]
    assert sigma[0] == pytest.approx(x, abs=1e-6)
    assert sigma[1] == pytest.approx(y, abs=1e-6)


@pytest.mark.parametrize("pi, expected", [
    ((0.5, 0.5), (1.0, 1.0)),
    ((0.8, 0.8), (5 / 6, 5 / 6)),
    ((0.5, 0.8), (0.0, 1.0)),
    ((0.8, 0.5), (1.0, 0.0)),
    ((0.7, 0.9), (2 / 3 / 0.7, 2 / 3 / 0.9)),
])
def test_last_stage_matches_closed_form(mac, mac_params, pi, expected):
    solver = StageSolver(SolverConfig(symmetric_mode=True))
    b = _mac_state(*pi)
    result = solver.solve(mac, None, b)
    assert result.converged
    beta = (result.strategy.probs[0][1, 1], result.strategy.probs[1][1, 1])
    assert beta == pytest.approx(expected, abs=1e-6)
    assert beta == pytest.approx(mac_beta2_closed_form(pi, mac_params), abs=1e-6)

    stage = build_stage_game(mac, None, result.update, b)
    values = type_values(stage, result.strategy)
    for x in range(2):
        assert values[0][x] == pytest.approx(mac_value2_closed_form(x, pi, mac_params, agent=0), abs=1e-9)
        assert values[1][x] == pytest.approx(mac_value2_closed_form(x, pi, mac_params, agent=1), abs=1e-9)


def test_symmetric_mode_mirrors_exactly(mac):
    solver = StageSolver(SolverConfig(symmetric_mode=True))
    left = solver.solve(mac, None, _mac_state(0.3, 0.9))
    right = solver.solve(mac, None, _mac_state(0.9, 0.3))
    assert np.array_equal(left.strategy.probs[0], right.strategy.probs[1])
    assert np.array_equal(left.strategy.probs[1], right.strategy.probs[0])


def test_first_stage_certificates(mac):
    solver = StageSolver(SolverConfig(symmetric_mode=True))
    b = _mac_state(0.5, 0.5, t=1)
    result = solver.solve(mac, ZeroContinuation(mac, 2), b)
    assert result.converged
    assert result.gap <= 1e-6
    assert result.residual <= 1e-9
    update, _, gap, residual = solver.certify(mac, ZeroContinuation(mac, 2), b, result.strategy)
    assert gap == pytest.approx(result.gap, abs=1e-12)
    assert update.keys() == result.update.keys()


def test_uniform_slice_gap_is_positive_off_equilibrium(mac):
    b = _mac_state(0.5, 0.5)
    stage = build_stage_game(mac, None, UpdateSlice(3, {}, {}), b)
    assert bne_gap(stage, StrategySlice.uniform(mac, 2)) > 0.1


def test_missing_continuation_is_rejected(mac):
    with pytest.raises(ValueError):
        build_stage_game(mac, None, None, _mac_state(0.5, 0.5, t=1))


def test_random_instances_solve():
    solver = StageSolver(SolverConfig())
    for seed in range(5):
        spec = random_spec(seed, horizon=2)
        b = initial_state(spec)
        result = solver.solve(spec, ZeroContinuation(spec, 2), b)
        assert result.converged, f"seed {seed}: gap {result.gap}"


def test_enumerate_keeps_candidates(mac):
    solver = StageSolver(SolverConfig(symmetric_mode=True, enumerate=True))
    result = solver.solve(mac, None, _mac_state(0.8, 0.8))
    assert len(result.candidates) == 3


def test_cell_seed_is_deterministic():
    b = _mac_state(0.25, 0.75)
    assert cell_seed(0, 2, b) == cell_seed(0, 2, _mac_state(0.25, 0.75))
    assert cell_seed(0, 2, b) != cell_seed(1, 2, b)


def test_last_stage_grid_sweep(mac, mac_params):
    config = SolverConfig(symmetric_mode=True)
    axis = [k / 20 for k in range(21)]
    worst = 0.0
    for pi in itertools.product(axis, axis):
        if in_boundary_band(pi, mac_params):
            continue
        b = _mac_state(*pi)
        result = solve_bne_consistent(mac, None, b, config)
        assert result.converged, pi
        beta = (result.strategy.probs[0][1, 1], result.strategy.probs[1][1, 1])
        expected = mac_beta2_closed_form(pi, mac_params)
        values = type_values(build_stage_game(mac, None, result.update, b), result.strategy)
        for n in range(2):
            # a queue that is never full leaves its transmit probability free
            if pi[n] > 0:
                worst = max(worst, abs(beta[n] - expected[n]))
            for x in range(2):
                closed = mac_value2_closed_form(x, pi, mac_params, agent=n)
                assert values[n][x] == pytest.approx(closed, abs=1e-9), (pi, n, x)
    assert worst <= 1e-6


def test_full_queue_transmits_when_both_beliefs_are_low(mac):
    b = _mac_state(0.5, 0.5)
    result = StageSolver(SolverConfig(symmetric_mode=True)).solve(mac, None, b)
    stage = build_stage_game(mac, None, result.update, b)
    values = type_values(stage, result.strategy)
    for n in range(2):
        br = best_response(stage, n, result.strategy)
        assert br.actions[1] == [1]
        assert br.values[1] == pytest.approx(values[n][1], abs=1e-12)
        assert expected_payoff(stage, n, 1, 1, result.strategy) == pytest.approx(values[n][1], abs=1e-12)
        assert expected_payoff(stage, n, 1, 0, result.strategy) < br.values[1]
        with pytest.raises(ValueError):
            expected_payoff(stage, n, 0, 1, result.strategy)
