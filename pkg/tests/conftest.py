from pathlib import Path

import pytest

REPO = Path(__file__).resolve().parent.parent
FIXTURE_DIR = REPO / "data" / "fixture_oils"


@pytest.fixture(scope="session")
def fixture_dir() -> Path:
    return FIXTURE_DIR


@pytest.fixture(scope="session")
def golden_dir() -> Path:
    return REPO / "tests" / "golden"


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    # JIT compile once up front so timed tests measure compute, not compilation
    from essoil import kernels

    kernels.warmup()
