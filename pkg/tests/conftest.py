from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner
from fastapi.testclient import TestClient

from netmax.core.config import load_experiment_config
from netmax.main import app
from netmax.services.network_model import Topology

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


@pytest.fixture
def config_dir() -> Path:
    return CONFIG_DIR


@pytest.fixture
def load_config():
    def _load(name: str, *overrides: str):
        return load_experiment_config(CONFIG_DIR / f"{name}.json", list(overrides))
    return _load


@pytest.fixture
def runner() -> CliRunner:
    return CliRunner()


@pytest.fixture
def client() -> TestClient:
    return TestClient(app)


@pytest.fixture
def two_nodes() -> Topology:
    return Topology.fully_connected(2)


@pytest.fixture
def unit_times_2() -> np.ndarray:
    return np.array([[0.0, 1.0], [1.0, 0.0]])


@pytest.fixture
def quiet_logs(monkeypatch):
    """Keep structured logs out of captured CLI output."""
    from netmax.core import config as config_module

    monkeypatch.setattr(config_module.settings, "log_level", "ERROR")
