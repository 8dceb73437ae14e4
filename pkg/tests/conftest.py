import os
from pathlib import Path

import numpy as np
import pytest

from molgp import data

DATA_DIR = Path(__file__).resolve().parent.parent / "data"
ESOL = DATA_DIR / "ESOL.csv"
FREESOLV = DATA_DIR / "FreeSolv.csv"
PHOTOSWITCH = DATA_DIR / "Photoswitch.csv"

ACCEPTANCE_LINES: list[str] = []


def need(path: Path) -> Path:
    if not path.is_file():
        pytest.skip(f"dataset file {path.name} not available")
    return path


@pytest.fixture(scope="session")
def esol():
    return data.load_csv(need(ESOL))


@pytest.fixture(scope="session")
def freesolv():
    return data.load_csv(need(FREESOLV))


@pytest.fixture(scope="session")
def esol_fps(esol):
    return data.featurize(esol.smiles, "fingerprint")


@pytest.fixture(scope="session")
def esol_seqs(esol):
    return data.featurize(esol.smiles, "smiles")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def extended_enabled() -> bool:
    return os.environ.get("MOLGP_EXTENDED", "") not in ("", "0")
