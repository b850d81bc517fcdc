import numpy as np
import pytest

from cibsolver.managers.beliefmanager import BeliefVector, CIBState
from cibsolver.managers.configmanager import SolverConfig, VerifyConfig
from cibsolver.managers.dpmanager import (
    AliasingError,
    DPSolver,
    GridBudgetError,
    OffSupportQueryError,
    aliasing_divergence,
    make_belief_grid,
    reachable_tree,
    refinement_report,
    simplex_count,
    simplex_points,
    simplex_weights,
    value_eval,
    value_update,
)
from cibsolver.managers.macmanager import write_closed_form_comparison
from cibsolver.managers.modelmanager import random_spec, spec_from_dict, spec_to_dict
from cibsolver.managers.verifymanager import Verifier


def test_simplex_grid_counts():
    assert simplex_count(2, 4) == 5
    assert simplex_count(3, 4) == 15
    pts = simplex_points(3, 4)
    assert pts.shape == (15, 3)
    assert (pts.sum(axis=1) == 4).all()
    assert len({tuple(row) for row in pts}) == 15


def test_simplex_weights_reproduce_the_point():
    rng = np.random.default_rng(3)
    m = 5
    pts = simplex_points(3, m)
    index = {tuple(int(c) for c in row): i for i, row in enumerate(pts)}
    for _ in range(50):
        p = rng.dirichlet(np.ones(3))
        weights = simplex_weights(p, m, index)
        assert sum(w for _, w in weights) == pytest.approx(1.0)
        assert all(w > 0 for _, w in weights)
        assert len(weights) <= 3
        back = sum(w * pts[i] / m for i, w in weights)
        assert back == pytest.approx(p, abs=1e-12)


def test_grid_point_has_a_single_weight():
    pts = simplex_points(2, 4)
    index = {tuple(int(c) for c in row): i for i, row in enumerate(pts)}
    weights = simplex_weights(np.array([0.25, 0.75]), 4, index)
    assert len(weights) == 1
    assert weights[0][1] == 1.0


def test_grid_budget(mac):
    with pytest.raises(GridBudgetError) as e:
        make_belief_grid(mac, 1, 10, "full", budget=100)
    assert e.value.count == 11 ** 4
    assert make_belief_grid(mac, 1, 10, "aliased").num_cells == 121


def test_mac_bundle_matches_closed_form(mac_bundle, mac_params, tmp_path):
    assert mac_bundle.complete
    path, worst_beta, worst_value = write_closed_form_comparison(mac_bundle, mac_params, tmp_path)
    assert path.exists()
    assert worst_beta <= 1e-6
    assert worst_value <= 1e-9


def test_mac_bundle_is_symmetric(mac_bundle):
    for t, sweep in mac_bundle.stages.items():
        for cell, b in enumerate(sweep.support.cells()):
            mirror = sweep.support.exact_cell(b.swapped())
            assert mirror is not None
            left, right = sweep.strategies[cell].probs, sweep.strategies[mirror].probs
            assert left[0] == pytest.approx(right[1], abs=1e-12)
            assert sweep.values[0].values[cell] == pytest.approx(sweep.values[1].values[mirror], abs=1e-12)


def test_value_eval(mac_bundle):
    sweep = mac_bundle.stages[2]
    table = sweep.values[0]
    b = sweep.support.state(7)
    assert value_eval(table, 1, b) == table.values[7, 1]
    with pytest.raises(ValueError):
        value_eval(table, 5, b)
    with pytest.raises(ValueError):
        value_eval(table, 0, mac_bundle.stages[1].support.state(0))


def test_value_update_reproduces_stored_tables(mac, mac_bundle):
    for t, sweep in mac_bundle.stages.items():
        continuation = mac_bundle.continuation(t)
        for cell in range(sweep.support.num_cells):
            values = value_update(mac, continuation, sweep.strategies[cell], sweep.updates[cell],
                                  sweep.support.state(cell))
            for n in range(2):
                assert values[n] == pytest.approx(sweep.values[n].values[cell], abs=1e-10)


def test_interpolated_value_between_grid_points(mac_bundle):
    table = mac_bundle.stages[2].values[0]
    grid = mac_bundle.stages[2].support
    lo = grid.exact_cell(CIBState(0, *(2 * [BeliefVector.of(2, [[0.75, 0.25], [0.75, 0.25]])])))
    hi = grid.exact_cell(CIBState(0, *(2 * [BeliefVector.of(2, [[0.5, 0.5], [0.75, 0.25]])])))
    mid = BeliefVector.of(2, [[0.625, 0.375], [0.75, 0.25]])
    expected = 0.5 * (table.values[lo] + table.values[hi])
    assert table.evaluate(CIBState(0, mid, mid)) == pytest.approx(expected, abs=1e-12)


def test_reachable_tree_rejects_foreign_beliefs(game_m):
    tree = reachable_tree(game_m.spec)[2]
    b = tree.state(0)
    assert tree.locate(b) == [(0, 1.0)]
    odd = BeliefVector.of(2, [[0.123, 0.877], [0.877, 0.123]])
    with pytest.raises(OffSupportQueryError):
        tree.locate(CIBState(b.c, odd, odd))


def test_tree_mode_needs_uncontrolled_beliefs(mac):
    with pytest.raises(ValueError):
        DPSolver().backward_induct_tree(mac)


def _type_matching_spec():
    """Each agent is paid for naming its own local state, so play reveals it."""
    data = spec_to_dict(random_spec(3, horizon=2))
    for n in range(2):
        table = np.zeros((1, 2, 2, 2, 2))
        for x0, x1, a0, a1 in np.ndindex(2, 2, 2, 2):
            table[0, x0, x1, a0, a1] = float((x0, x1)[n] == (a0, a1)[n])
        data["utilities"][n] = {"all": table.tolist()}
    return spec_from_dict(data)


def test_aliased_grid_refuses_revealing_play():
    spec = _type_matching_spec()
    with pytest.raises(AliasingError) as e:
        DPSolver(SolverConfig(belief_mode="aliased")).backward_induct(spec, 2)
    assert e.value.t == 1
    assert e.value.divergence > 1e-3


def test_off_path_aliasing_accepts_mac(mac_bundle):
    assert aliasing_divergence(mac_bundle.stages[1]) > 0.0
    assert mac_bundle.config.off_path_aliasing


def test_last_stage_does_not_move_under_refinement(mac, mac_config):
    rows = refinement_report(mac, [2, 4], mac_config)
    last = [r for r in rows if r["t"] == 2]
    assert len(last) == 1
    assert last[0]["max_change"] <= 1e-12
    assert {r["t"] for r in rows} == {1, 2}


@pytest.mark.slow
def test_fine_mac_grid_certifies(mac, mac_params, mac_config, tmp_path):
    bundle = DPSolver(mac_config).backward_induct(mac, 100)
    assert bundle.complete
    _, worst_beta, worst_value = write_closed_form_comparison(bundle, mac_params, tmp_path)
    assert worst_beta <= 1e-6
    assert worst_value <= 1e-9
    report = Verifier(VerifyConfig(simulation_samples=20000, history_samples=500)).verify(mac, bundle)
    assert report.criteria["stage BNE gap"][0]
    assert report.criteria["stage consistency residual"][0]
