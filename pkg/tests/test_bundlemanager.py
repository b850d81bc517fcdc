import json

import numpy as np
import pytest

from cibsolver.managers.bundlemanager import MANIFEST, BundleManager, BundleMismatchError
from cibsolver.managers.modelmanager import random_spec


def _assert_same(a, b):
    assert a.spec_fingerprint == b.spec_fingerprint
    assert a.config == b.config
    assert sorted(a.stages) == sorted(b.stages)
    for t in a.stages:
        sa, sb = a.stages[t], b.stages[t]
        assert sa.support.num_cells == sb.support.num_cells
        assert np.array_equal(sa.gaps, sb.gaps)
        assert np.array_equal(sa.residuals, sb.residuals)
        assert np.array_equal(sa.converged, sb.converged)
        assert sa.methods == sb.methods
        for n in range(len(sa.values)):
            assert np.array_equal(sa.values[n].values, sb.values[n].values)
        for cell in range(sa.support.num_cells):
            assert sa.support.state(cell).coords().tobytes() == sb.support.state(cell).coords().tobytes()
            for p, q in zip(sa.strategies[cell].probs, sb.strategies[cell].probs):
                assert np.array_equal(p, q)
            ua, ub = sa.updates[cell], sb.updates[cell]
            assert set(ua.keys()) == set(ub.keys())
            for key in ua.keys():
                assert np.array_equal(ua[key].coords(), ub[key].coords())
                assert np.array_equal(ua.signaling_free[key].coords(), ub.signaling_free[key].coords())


def test_grid_bundle_reloads_bit_exact(mac, mac_bundle, tmp_path):
    bundles = BundleManager()
    bundles.save(mac, mac_bundle, tmp_path / "mac")
    _assert_same(mac_bundle, bundles.load(mac, tmp_path / "mac"))


def test_tree_bundle_reloads_bit_exact(game_m, game_m_solution, tmp_path):
    bundle, _ = game_m_solution
    bundles = BundleManager()
    bundles.save(game_m.spec, bundle, tmp_path / "game_m")
    again = bundles.load(game_m.spec, tmp_path / "game_m")
    _assert_same(bundle, again)
    assert again.stages[2].support.kind == "tree"


def test_manifest_records_certificates(mac, mac_bundle, tmp_path):
    BundleManager().save(mac, mac_bundle, tmp_path)
    manifest = json.loads((tmp_path / MANIFEST).read_text(encoding="utf-8"))
    assert manifest["certificates"]["complete"] is True
    assert manifest["certificates"]["failed_cells"] == []
    assert manifest["supports"]["1"] == {"kind": "grid", "m": 4, "mode": "aliased"}


def test_wrong_spec_is_rejected(mac, mac_bundle, tmp_path):
    BundleManager().save(mac, mac_bundle, tmp_path)
    with pytest.raises(BundleMismatchError):
        BundleManager().load(random_spec(0, horizon=2), tmp_path)


def test_missing_manifest(mac, tmp_path):
    with pytest.raises(FileNotFoundError):
        BundleManager().load(mac, tmp_path)
