import pathlib

import pytest

from teleopsim.config import load_run_config

REPO = pathlib.Path(__file__).resolve().parents[1]
CONFIG_PATH = REPO / "configs" / "default_run.yaml"


@pytest.fixture(scope="session")
def run_config():
    return load_run_config(CONFIG_PATH)


@pytest.fixture(scope="session")
def config_path():
    return CONFIG_PATH
