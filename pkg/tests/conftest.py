import json
from pathlib import Path

import numpy as np
import pytest

from altfl import data, model as mc
from altfl.attacks import AttackEnv
from altfl.engine import prepare_federation

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def digits():
    return data.load_digits8()


@pytest.fixture(scope="session")
def desk():
    return mc.desk_mlp()


@pytest.fixture(scope="session")
def federation(digits, desk):
    return prepare_federation(digits, desk, num_clients=3, alpha=0.5, data_seed=0)


@pytest.fixture(scope="session")
def attack_env(digits, desk):
    return AttackEnv.from_dataset(digits, desk, pool_size=1000)


@pytest.fixture(scope="session")
def oracles():
    return json.loads((FIXTURES / "oracles.json").read_text())


def load_fixture(name):
    return json.loads((FIXTURES / name).read_text())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance criteria report one PASS/FAIL line each, collected here and printed after the run
CRITERIA = {}


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        ok, title, detail = CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
