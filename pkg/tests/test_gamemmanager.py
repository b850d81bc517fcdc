from dataclasses import replace

import numpy as np
import pytest

from cibsolver.managers.dpmanager import EquilibriumBundle
from cibsolver.managers.gamemmanager import (
    WAIT,
    GameMStructureError,
    decomposition_residual,
    game_m_from_spec,
    game_m_generate,
    game_m_solve,
    next_epoch,
    next_epoch_public,
    structural_violations,
)
from cibsolver.managers.modelmanager import spec_fingerprint, spec_from_dict, spec_to_dict


def test_generator_is_deterministic():
    a = game_m_generate(3, epochs=(1,))
    b = game_m_generate(3, epochs=(1,))
    assert spec_fingerprint(a.spec) == spec_fingerprint(b.spec)
    assert spec_fingerprint(game_m_generate(4).spec) != spec_fingerprint(a.spec)


def test_generated_structure(game_m):
    spec = game_m.spec
    assert structural_violations(game_m) == []
    assert spec.has_uncontrolled_beliefs()
    # t = 2 is off-epoch: the public state records the joint action
    assert spec.public_size(2) == 1
    assert spec.public_size(3) == 4
    assert spec.public_states[2][3] == "r0|a1,a1"


def test_bad_epochs_are_rejected():
    with pytest.raises(ValueError):
        game_m_generate(0, horizon=3, epochs=(3,))


def test_solution_passes_the_structural_checks(game_m_solution):
    bundle, report = game_m_solution
    assert bundle.complete
    assert report.passed
    assert report.pooled_variation == 0.0
    assert report.psi_equals_signaling_free
    assert report.action_invariance_failures == []
    assert report.decomposition_residual <= 1e-10
    assert sum(report.methods.values()) == sum(report.nodes.values())
    assert "verdict: PASS" in report.to_text()


def test_zero_utility_gives_uniform_play():
    bundle, report = game_m_solve(game_m_generate(2, zero_utility=True))
    assert report.passed
    assert set(report.methods) == {"pooled-uniform"}
    for sweep in bundle.stages.values():
        for table in sweep.values:
            assert not table.values.any()


def test_sequential_moves():
    gm = game_m_generate(5, num_agents=2, horizon=4, epochs=(1, 3), sequential=True)
    spec = gm.spec
    assert spec.actions[1][0] == (WAIT,)
    assert spec.actions[0][1] == (WAIT,)
    bundle, report = game_m_solve(gm)
    assert report.passed
    for t, sweep in bundle.stages.items():
        waiting = t % 2
        for strategy in sweep.strategies:
            assert np.array_equal(strategy.probs[waiting], np.ones((2, 1)))


def test_stochastic_roots():
    gm = game_m_generate(8, num_agents=2, horizon=3, epochs=(1, 2), stochastic_roots=True)
    bundle, report = game_m_solve(gm)
    assert report.passed
    assert bundle.stages[1].support.num_cells == 2


def test_epochs_are_recovered_from_a_model_file(game_m):
    spec = spec_from_dict(spec_to_dict(game_m.spec))
    again = game_m_from_spec(spec)
    assert again.epochs == game_m.epochs
    assert not again.sequential


def test_mac_is_not_game_m(mac):
    with pytest.raises(GameMStructureError) as e:
        game_m_from_spec(mac)
    assert any("depend on actions" in v for v in e.value.violations)


@pytest.mark.slow
def test_many_instances_pass():
    for seed in range(50):
        sizes = np.random.default_rng(seed).integers(2, 4, size=3)
        gm = game_m_generate(seed, num_agents=2, horizon=3, num_states=int(sizes[0]),
                             num_actions=int(sizes[1]), num_observations=int(sizes[2]),
                             epochs=(1,) if seed % 2 else (1, 2))
        _, report = game_m_solve(gm)
        assert report.passed, f"seed {seed}: {report.to_text()}"


def test_values_after_the_last_epoch_ignore_own_state(game_m, game_m_solution):
    bundle, _ = game_m_solution
    assert next_epoch(game_m, 2) is None
    for t in (2, 3):
        for table in bundle.stages[t].values:
            assert np.abs(table.values - table.values[:, :1]).max() <= 1e-12


def test_epoch_decomposition_holds_across_frozen_histories():
    gm = game_m_generate(11, num_agents=2, horizon=4, epochs=(2,))
    bundle, report = game_m_solve(gm)
    assert report.passed
    assert report.decomposition_residual <= 1e-10
    # t = 1 is frozen: the four t = 2 nodes differ only in the recorded joint action
    sweep = bundle.stages[2]
    assert sweep.support.num_cells == 4
    laws = [next_epoch_public(gm, bundle, 2, cell) for cell in range(4)]
    assert all(np.array_equal(law, np.array([1.0])) for law in laws)
    assert next_epoch_public(gm, bundle, 1, 0) == pytest.approx(np.array([1.0]))

    table = sweep.values[0]
    values = table.values.copy()
    values[1, 1] += 0.05
    broken = EquilibriumBundle(bundle.spec_fingerprint, bundle.config, bundle.horizon, dict(bundle.stages))
    broken.stages[2] = replace(sweep, values=[replace(table, values=values)] + sweep.values[1:])
    assert decomposition_residual(gm, broken) == pytest.approx(0.05, abs=1e-9)
