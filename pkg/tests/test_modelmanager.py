import json

import numpy as np
import pytest

from cibsolver.managers.modelmanager import (
    NO_OBSERVATION,
    NO_PUBLIC_STATE,
    SpecParseError,
    SpecValidationError,
    random_spec,
    spec_fingerprint,
    spec_from_dict,
    spec_to_dict,
    validate_spec,
)


def test_bundled_mac_file_matches_builder(models, mac):
    spec = models.load_spec("mac.json")
    assert spec_fingerprint(spec) == spec_fingerprint(mac)
    assert spec.public_states[0] == (NO_PUBLIC_STATE,)
    assert spec.observations[0][0] == (NO_OBSERVATION,)


def test_mac_utilities(mac):
    # x = (1, 1), a = (1, 0): agent 1 delivers, agent 2 keeps a full queue and risks a drop
    u1 = mac.utility[0][0][0, 1, 1, 1, 0]
    u2 = mac.utility[1][0][0, 1, 1, 1, 0]
    assert u1 == 1.0
    assert u2 == 0.0
    assert mac.utility[0][0][0, 0, 0, 0, 0] == 0.0
    assert mac.utility[1][0][0, 0, 0, 0, 0] == 0.0


def test_mac_structure(mac):
    assert validate_spec(mac) == []
    assert mac.is_symmetric()
    assert not mac.has_uncontrolled_beliefs()
    assert mac.admissible_actions(0, 1, 0) == [0]
    assert mac.admissible_actions(0, 1, 1) == [0, 1]


def test_random_spec_is_valid_and_deterministic():
    a, b = random_spec(11), random_spec(11)
    assert validate_spec(a) == []
    assert spec_fingerprint(a) == spec_fingerprint(b)
    assert spec_fingerprint(random_spec(12)) != spec_fingerprint(a)


def test_serialization_keeps_fingerprint():
    spec = random_spec(3, state_dependent_actions=True)
    again = spec_from_dict(json.loads(json.dumps(spec_to_dict(spec))))
    assert spec_fingerprint(again) == spec_fingerprint(spec)
    for n in spec.agents:
        for t in range(1, spec.horizon):
            assert np.array_equal(again.local_kernel[n][t - 1], spec.local_kernel[n][t - 1])


def test_tables_are_read_only(mac):
    with pytest.raises(ValueError):
        mac.utility[0][0][0, 0, 0, 0, 0] = 5.0


def test_missing_section_is_a_parse_error():
    with pytest.raises(SpecParseError) as e:
        spec_from_dict({"meta": {"num_agents": 1, "horizon": 1}})
    assert "missing sections" in str(e.value)


def test_bad_time_key_is_a_parse_error(models):
    data = spec_to_dict(models.load_spec("mac.json"))
    data["utilities"][0] = {"2": data["utilities"][0]["all"]}
    with pytest.raises(SpecParseError):
        spec_from_dict(data)


def test_missing_file(models, tmp_path):
    with pytest.raises(SpecParseError):
        models.load_spec(tmp_path / "nope.json")


def test_bad_kernel_row_is_reported(models, tmp_path):
    data = spec_to_dict(models.load_spec("mac.json"))
    data["kernels"]["local"][0]["all"][0][0][0] = [0.5, 0.6]
    path = tmp_path / "broken.json"
    path.write_text(json.dumps(data), encoding="utf-8")
    with pytest.raises(SpecValidationError) as e:
        models.load_spec(path)
    assert any("local kernel" in line for line in e.value.diagnostics)


def test_nan_entries_are_reported(models, tmp_path):
    data = spec_to_dict(models.load_spec("mac.json"))
    data["kernels"]["local"][0]["all"][0][0][0] = [float("nan"), 1.0]
    data["initial"]["local"][1] = [float("nan"), 0.5]
    path = tmp_path / "nan.json"
    path.write_text(json.dumps(data), encoding="utf-8")
    with pytest.raises(SpecValidationError) as e:
        models.load_spec(path)
    assert any("local kernel" in line and "non-finite" in line for line in e.value.diagnostics)
    assert any("initial prior of agent 2" in line for line in e.value.diagnostics)


def test_correlated_prior_is_rejected(models):
    data = spec_to_dict(models.load_spec("mac.json"))
    data["initial"] = {"joint": [[0.5, 0.0], [0.0, 0.5]]}
    diagnostics = validate_spec(spec_from_dict(data))
    assert any("product-form" in line for line in diagnostics)


def test_save_and_load(models, mac, tmp_path):
    path = models.save_spec(mac, tmp_path / "out" / "mac.json")
    assert spec_fingerprint(models.load_spec(path)) == spec_fingerprint(mac)
