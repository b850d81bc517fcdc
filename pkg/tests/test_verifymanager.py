from dataclasses import replace

import numpy as np
import pytest

from cibsolver.managers.beliefmanager import BeliefVector, CIBState, EnumerationBudgetError, signaling_free_step
from cibsolver.managers.dpmanager import EquilibriumBundle
from cibsolver.managers.modelmanager import random_spec
from cibsolver.managers.stagemanager import StrategySlice, UpdateSlice, build_stage_game, type_action_payoffs
from cibsolver.managers.verifymanager import (
    BundleProfile,
    CommonHistory,
    ExplicitProfile,
    Verifier,
    check_conditional_independence,
    check_consistency,
    construct_full_belief,
    deviation_mdp_best_response,
    exhaustive_deviation_gap,
    random_deviation,
    reachable_cells,
    simulate_value,
    verify_cib_pbe,
)


def _uniform_profile(spec, **kwargs):
    return ExplicitProfile(spec, lambda b: StrategySlice.uniform(spec, b.t), **kwargs)


def _revealing_profile(spec, **kwargs):
    def strategy(b):
        return StrategySlice(tuple(np.eye(2) for _ in spec.agents))
    return ExplicitProfile(spec, strategy, **kwargs)


def test_game_m_solution_certifies(game_m, game_m_solution, quick_verify):
    bundle, _ = game_m_solution
    config = replace(quick_verify, eps_total=1e-8, simulation_samples=0)
    report = Verifier(config).verify(game_m.spec, bundle)
    assert report.passed, report.to_text()
    assert report.exact
    assert "exhaustive behavioral deviation" in report.criteria
    assert report.max_deviation_gap() <= 1e-8
    assert "verdict: PASS" in report.to_text()


def test_fault_injection_is_caught(game_m, game_m_solution, quick_verify):
    bundle, _ = game_m_solution
    spec = game_m.spec
    sweep = bundle.stages[1]
    b = sweep.support.state(0)
    strategy = sweep.strategies[0]
    stage = build_stage_game(spec, bundle.continuation(1), sweep.updates[0], b)
    worst = int(np.argmin(b.pi[0] @ type_action_payoffs(stage, 0, strategy)))
    probs = np.zeros_like(strategy.probs[0])
    probs[:, worst] = 1.0
    broken = EquilibriumBundle(bundle.spec_fingerprint, bundle.config, bundle.horizon, dict(bundle.stages))
    broken.stages[1] = replace(sweep, strategies=[strategy.with_agent(0, probs)] + sweep.strategies[1:])

    report = Verifier(replace(quick_verify, eps_total=1e-8, simulation_samples=0)).verify(spec, broken)
    assert not report.passed
    assert not report.criteria["stage BNE gap"][0]
    assert not report.criteria["deviation gap"][0]
    assert "verdict: FAIL" in report.to_text()


def test_failed_flag_does_not_hide_a_reachable_gap(game_m, game_m_solution, quick_verify):
    bundle, _ = game_m_solution
    spec = game_m.spec
    sweep = bundle.stages[1]
    b = sweep.support.state(0)
    strategy = sweep.strategies[0]
    stage = build_stage_game(spec, bundle.continuation(1), sweep.updates[0], b)
    worst = int(np.argmin(b.pi[0] @ type_action_payoffs(stage, 0, strategy)))
    probs = np.zeros_like(strategy.probs[0])
    probs[:, worst] = 1.0
    converged = sweep.converged.copy()
    converged[0] = False
    broken = EquilibriumBundle(bundle.spec_fingerprint, bundle.config, bundle.horizon, dict(bundle.stages))
    broken.stages[1] = replace(sweep, strategies=[strategy.with_agent(0, probs)] + sweep.strategies[1:],
                               converged=converged)

    report = Verifier(replace(quick_verify, eps_total=1e-8, simulation_samples=0)).verify(spec, broken)
    cell = next(c for c in report.cells if (c.t, c.cell) == (1, 0))
    assert cell.failed and cell.on_path
    assert cell.bne_gap > 1e-8
    assert not report.criteria["stage BNE gap"][0]
    assert not report.criteria["failed cells on path"][0]


def test_uniform_mixing_on_the_mac_grid_is_caught(mac, mac_bundle, quick_verify):
    sweep = mac_bundle.stages[2]
    half = BeliefVector.of(2, [[0.5, 0.5], [0.5, 0.5]])
    cell = sweep.support.exact_cell(CIBState(0, half, half))
    strategies = list(sweep.strategies)
    strategies[cell] = StrategySlice.uniform(mac, 2)
    broken = EquilibriumBundle(mac_bundle.spec_fingerprint, mac_bundle.config, mac_bundle.horizon,
                               dict(mac_bundle.stages))
    broken.stages[2] = replace(sweep, strategies=strategies)

    report = Verifier(replace(quick_verify, simulation_samples=0)).verify(mac, broken)
    assert not report.passed
    assert not report.criteria["stage BNE gap"][0]


def test_report_csv(game_m, game_m_solution, quick_verify, tmp_path):
    bundle, _ = game_m_solution
    report = Verifier(replace(quick_verify, simulation_samples=0)).verify(game_m.spec, bundle)
    path = report.write_csv(tmp_path / "report.csv")
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0].startswith("t,cell,c,on_path")
    assert len(lines) == 1 + len(report.cells)


def test_wrong_fingerprint_fails(game_m_solution, quick_verify):
    bundle, _ = game_m_solution
    report = Verifier(quick_verify).verify(random_spec(0), bundle)
    assert not report.passed
    assert "spec fingerprint" in report.criteria


def test_all_cells_reachable_on_a_tree(game_m, game_m_solution):
    bundle, _ = game_m_solution
    reach = reachable_cells(game_m.spec, bundle)
    for t, sweep in bundle.stages.items():
        assert reach[t] == set(range(sweep.support.num_cells))


def test_simulation_matches_tabulated_values(game_m, game_m_solution):
    bundle, _ = game_m_solution
    rng = np.random.default_rng(1)
    for n in game_m.spec.agents:
        for x in range(2):
            mean, stderr = simulate_value(game_m.spec, bundle, 1, 0, n, x, 20000, rng)
            tab = bundle.stages[1].values[n].values[0, x]
            assert abs(mean - tab) <= 5 * stderr + 1e-9


def test_simulation_follows_true_types_not_stored_beliefs(mac, mac_bundle):
    sweep = mac_bundle.stages[1]
    empty = BeliefVector.of(1, [[1.0, 0.0], [1.0, 0.0]])
    cell = sweep.support.exact_cell(CIBState(0, empty, empty))
    # both queues empty: next slot is (0.5, 0.5), where full queues transmit
    tab = sweep.values[0].values[cell, 0]
    assert tab == pytest.approx(0.25, abs=1e-9)
    mean, stderr = simulate_value(mac, mac_bundle, 1, cell, 0, 0, 20000, np.random.default_rng(5))
    assert abs(mean - tab) <= 5 * stderr

    # claim both queues are surely full next slot; the true arrivals stay at p
    full = BeliefVector.of(2, [[0.0, 1.0], [0.0, 1.0]])
    update = sweep.updates[cell]
    updates = list(sweep.updates)
    updates[cell] = UpdateSlice(update.t, {key: full for key in update.keys()}, dict(update.signaling_free))
    broken = EquilibriumBundle(mac_bundle.spec_fingerprint, mac_bundle.config, mac_bundle.horizon,
                               dict(mac_bundle.stages))
    broken.stages[1] = replace(sweep, updates=updates)
    mean, stderr = simulate_value(mac, broken, 1, cell, 0, 0, 20000, np.random.default_rng(5))
    assert mean == pytest.approx(1 / 6, abs=5 * stderr)
    assert abs(mean - tab) > 5 * stderr


def test_consistent_update_passes_brute_force_bayes(quick_verify):
    spec = random_spec(4)
    report = check_consistency(spec, _revealing_profile(spec), quick_verify)
    assert report.exhaustive
    assert report.histories_checked > 0
    assert report.passed(1e-9, 1e-10)


def test_signaling_free_beliefs_fail_under_a_revealing_strategy(quick_verify):
    spec = random_spec(4)

    def naive(b, y, a):
        return signaling_free_step(spec, b.pi_hat, y, a)

    report = check_consistency(spec, _revealing_profile(spec, update=naive), quick_verify)
    # mu is rebuilt from lambda, so the stale psi shows up in the marginals
    assert report.max_marginal_residual > 1e-3
    assert not report.passed(1e-9, 1e-10)
    assert any(kind == "marginal" for _, kind, _ in report.flagged)


def test_conditional_independence_under_deviations(quick_verify):
    spec = random_spec(6)
    deviations = [(0, random_deviation(spec, 0, 1)), (1, random_deviation(spec, 1, 2))]
    report = check_conditional_independence(spec, _uniform_profile(spec), deviations, quick_verify)
    assert report.deviations_checked == 2
    assert report.information_sets_checked > 0
    assert report.max_residual <= 1e-9


def test_exhaustive_deviation_gap(game_m, game_m_solution):
    bundle, _ = game_m_solution
    profile = BundleProfile(game_m.spec, bundle)
    gap, roots = exhaustive_deviation_gap(game_m.spec, profile, 0)
    assert gap <= 1e-8
    assert len(roots) == 2
    for best, follow in roots.values():
        assert best >= follow - 1e-12

    # the uniform profile of a random game leaves something on the table
    spec = random_spec(9)
    gap, _ = exhaustive_deviation_gap(spec, _uniform_profile(spec), 0)
    assert gap > 1e-6


def test_exhaustive_check_respects_budget(game_m, game_m_solution):
    bundle, _ = game_m_solution
    with pytest.raises(EnumerationBudgetError):
        exhaustive_deviation_gap(game_m.spec, BundleProfile(game_m.spec, bundle), 0, budget=1)


def test_full_belief_under_a_revealing_profile():
    spec = random_spec(4)
    profile = _revealing_profile(spec)
    root = construct_full_belief(spec, profile, CommonHistory(0))
    for k in spec.agents:
        assert root.mu[k] == pytest.approx(spec.initial_local[k], abs=1e-12)

    # agent 1 played a1 and agent 2 played a0, so x_1 is known for both
    fb = construct_full_belief(spec, profile, CommonHistory(0).extend((0, 1), (1, 0), 0))
    assert fb.t == 2
    assert fb.mu[0][0].sum() == 0.0
    assert fb.mu[1][1].sum() == 0.0
    assert fb.product().sum() == pytest.approx(1.0)
    assert fb.marginal_residual <= 1e-10
    assert not any(fb.zero_branch)


def test_deviation_mdp_has_no_gain_on_game_m(game_m, game_m_solution):
    bundle, _ = game_m_solution
    for n in game_m.spec.agents:
        dev = deviation_mdp_best_response(game_m.spec, bundle, n)
        for t in bundle.stages:
            assert dev.gaps(t).max() <= 1e-8
            assert dev.follow[t] == pytest.approx(bundle.stages[t].values[n].values, abs=1e-9)


def test_verify_cib_pbe_entry_point(game_m, game_m_solution, quick_verify):
    bundle, _ = game_m_solution
    report = verify_cib_pbe(game_m.spec, bundle, replace(quick_verify, eps_total=1e-8, simulation_samples=0))
    assert report.passed, report.to_text()
