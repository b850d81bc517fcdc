import csv

import pytest

from cibsolver.managers.macmanager import (
    MacParams,
    in_boundary_band,
    mac_belief_update_closed_form,
    mac_beta2_closed_form,
    mac_value2_closed_form,
    write_mac_surfaces,
)


def test_threshold(mac_params):
    assert mac_params.cp == 1.0
    assert mac_params.c_star == pytest.approx(2 / 3)


@pytest.mark.parametrize("kwargs", [{"p": 0.0}, {"p": 1.0}, {"c": -1.0}, {"horizon": 0}])
def test_bad_parameters(kwargs):
    with pytest.raises(ValueError):
        MacParams(**kwargs)


def test_closed_form_regions(mac_params):
    assert mac_beta2_closed_form((0.2, 0.3), mac_params) == (1.0, 1.0)
    assert mac_beta2_closed_form((0.2, 0.9), mac_params) == (0.0, 1.0)
    assert mac_beta2_closed_form((0.9, 0.2), mac_params) == (1.0, 0.0)
    assert mac_beta2_closed_form((1.0, 1.0), mac_params) == pytest.approx((2 / 3, 2 / 3))


def test_closed_form_values(mac_params):
    # both queues surely full: each transmits with probability 2/3
    assert mac_value2_closed_form(0, (1.0, 1.0), mac_params) == pytest.approx(2 / 3)
    assert mac_value2_closed_form(1, (1.0, 1.0), mac_params) == pytest.approx(-1 / 3)
    # the other queue is empty: a full queue transmits alone
    assert mac_value2_closed_form(1, (0.5, 0.0), mac_params) == pytest.approx(1.0)


def test_closed_form_update(mac_params):
    assert mac_belief_update_closed_form(0.4, 0.5, (1, 1), mac_params) == 1.0
    assert mac_belief_update_closed_form(0.4, 0.5, (1, 0), mac_params) == 0.5
    assert mac_belief_update_closed_form(0.4, 0.5, (0, 1), mac_params) == pytest.approx((0.5 + 0.4 * 0.0) / 0.8)
    # silence has zero probability here, so the signaling-free update applies
    assert mac_belief_update_closed_form(1.0, 1.0, (0, 0), mac_params) == pytest.approx(0.5 + 0.5)


def test_boundary_band(mac_params):
    assert in_boundary_band((2 / 3, 0.1), mac_params)
    assert not in_boundary_band((0.5, 0.75), mac_params)


def test_surfaces(mac_bundle, tmp_path):
    paths = write_mac_surfaces(mac_bundle, tmp_path)
    assert [p.name for p in paths] == ["mac_surfaces_t1.csv", "mac_surfaces_t2.csv"]
    with paths[1].open(newline="", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 25
    for row in rows:
        assert row["converged"] == "1"
        if float(row["pi1"]) == 0.5 and float(row["pi2"]) == 0.5:
            assert float(row["beta1"]) == pytest.approx(1.0)
