import json
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from pomc import fixtures, model as M
from pomc.grid import build_grid


@pytest.fixture(scope="session")
def fixture_model():
    return fixtures.three_state_model()


@pytest.fixture(scope="session")
def fixture_mu():
    return M.InitialLaw(np.array([0.2, 0.3, 0.5]))


@pytest.fixture(scope="session")
def frozen_model():
    return fixtures.frozen_model()


@pytest.fixture(scope="session")
def perfect_model():
    return fixtures.perfect_observation_model()


@pytest.fixture(scope="session")
def grid16(fixture_model):
    return build_grid(fixture_model, 16)


@pytest.fixture()
def model_file(tmp_path):
    path = tmp_path / "model.json"
    path.write_text(json.dumps(fixtures.three_state_model_dict()))
    return path
