import json

import pytest

from cibsolver.cli.common import EXIT_BUDGET, EXIT_OK, EXIT_VALIDATION, parse_ints, parse_profiles
from cibsolver.cli.mainparser import build_parser, run


@pytest.fixture
def game_m_file(tmp_path):
    path = tmp_path / "gm.json"
    assert run(["gen-game-m", "--seed", "3", "--sizes", "2,3,2,2,2", "--epochs", "1", "--out", str(path)]) == EXIT_OK
    return path


def test_parsers():
    assert parse_profiles("0,1;1,0") == [(0, 1), (1, 0)]
    assert parse_profiles("") == []
    assert parse_ints("1, 2,") == (1, 2)


def test_subcommands_are_registered():
    parser = build_parser()
    for command in ("solve", "verify", "mac", "gen-game-m", "solve-game-m", "oracle"):
        args = parser.parse_args(_minimal(command))
        assert args.command == command


def _minimal(command):
    return {
        "solve": ["solve", "--spec", "mac.json", "--grid", "2", "--out", "x"],
        "verify": ["verify", "--spec", "mac.json", "--bundle", "b", "--out", "r.txt"],
        "mac": ["mac", "--out", "x"],
        "gen-game-m": ["gen-game-m", "--out", "x.json"],
        "solve-game-m": ["solve-game-m", "--spec", "x.json", "--out", "x"],
        "oracle": ["oracle", "--spec", "mac.json"],
    }[command]


def test_game_m_round_trip(game_m_file, tmp_path):
    out = tmp_path / "solved"
    assert run(["solve-game-m", "--spec", str(game_m_file), "--out", str(out)]) == EXIT_OK
    assert "verdict: PASS" in (out / "game_m_report.txt").read_text(encoding="utf-8")
    assert (out / "bundle" / "manifest.json").exists()

    report = tmp_path / "report.txt"
    code = run(["verify", "--spec", str(game_m_file), "--bundle", str(out / "bundle"),
                "--eps", "1e-8", "--samples", "0", "--out", str(report)])
    assert code == EXIT_OK
    assert report.with_suffix(".csv").exists()


def test_invalid_spec_exits_with_validation_code(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{\"meta\": ", encoding="utf-8")
    assert run(["solve", "--spec", str(path), "--grid", "2", "--out", str(tmp_path / "o")]) == EXIT_VALIDATION


def test_grid_or_tree_is_required(tmp_path):
    assert run(["solve", "--spec", "mac.json", "--out", str(tmp_path / "o")]) == EXIT_VALIDATION


def test_tree_mode_rejects_mac(tmp_path):
    assert run(["solve", "--spec", "mac.json", "--tree", "--out", str(tmp_path / "o")]) == EXIT_VALIDATION


def test_grid_budget_exits_with_budget_code(tmp_path):
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"solver": {"grid_budget": 10}}), encoding="utf-8")
    code = run(["solve", "--config", str(config), "--spec", "mac.json", "--grid", "10",
                "--out", str(tmp_path / "o")])
    assert code == EXIT_BUDGET


def test_unknown_config_key_fails_at_startup(tmp_path):
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"solver": {"speed": "fast"}}), encoding="utf-8")
    assert run(["mac", "--config", str(config), "--out", str(tmp_path / "o")]) == EXIT_VALIDATION


def test_mac_outputs_are_reproducible(tmp_path):
    first, second = tmp_path / "a", tmp_path / "b"
    assert run(["mac", "--grid", "4", "--out", str(first)]) == EXIT_OK
    assert run(["mac", "--grid", "4", "--out", str(second)]) == EXIT_OK
    names = ["mac_surfaces_t1.csv", "mac_surfaces_t2.csv", "mac_closed_form_t2.csv",
             "bundle/values_t1_agent1.csv", "bundle/strategy_t1_agent2.csv", "bundle/updates_t1.csv"]
    for name in names:
        assert (first / name).read_bytes() == (second / name).read_bytes()


def test_oracle_prints_marginals(capsys):
    assert run(["oracle", "--spec", "mac.json", "--actions", "1,0", "--observations", "0,0"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "t=2" in out
