import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from cibsolver.managers.configmanager import SolverConfig, VerifyConfig
from cibsolver.managers.dpmanager import DPSolver
from cibsolver.managers.gamemmanager import game_m_generate, game_m_solve
from cibsolver.managers.macmanager import MacParams, mac_spec
from cibsolver.managers.modelmanager import ModelManager

MODEL_DIR = Path(__file__).resolve().parent.parent / "model"


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow certification tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture(scope="session")
def models():
    return ModelManager(MODEL_DIR)


@pytest.fixture(scope="session")
def mac_params():
    return MacParams(p=0.5, c=2.0, horizon=2)


@pytest.fixture(scope="session")
def mac(mac_params):
    return mac_spec(mac_params)


@pytest.fixture(scope="session")
def mac_config():
    return SolverConfig(belief_mode="aliased", off_path_aliasing=True, symmetric_mode=True)


@pytest.fixture(scope="session")
def mac_bundle(mac, mac_config):
    return DPSolver(mac_config).backward_induct(mac, 4)


@pytest.fixture(scope="session")
def game_m():
    return game_m_generate(7, num_agents=2, horizon=3, epochs=(1,))


@pytest.fixture(scope="session")
def game_m_solution(game_m):
    return game_m_solve(game_m)


@pytest.fixture
def quick_verify():
    """Verifier settings small enough for unit tests."""
    return VerifyConfig(simulation_samples=4000, simulation_cells=2, history_samples=200)
