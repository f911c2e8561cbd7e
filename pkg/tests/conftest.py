import numpy as np
import pytest

from magkg.grid import make_grid
from magkg.potentials import make_potential, random_potential


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture(scope="session")
def grid8():
    return make_grid(8, 4.0)


@pytest.fixture(scope="session")
def grid4():
    return make_grid(4, 3.0)


@pytest.fixture(scope="session")
def pot8(grid8):
    """Smooth random A and V on the n=8 grid (amplitude 0.1)."""
    return random_potential(grid8, np.random.default_rng(7), amplitude=0.1, v_amplitude=0.1)


@pytest.fixture(scope="session")
def free8(grid8):
    return make_potential("zero", {}, grid8)


def rel(a, b):
    return float(np.linalg.norm(np.ravel(a) - np.ravel(b)) / np.linalg.norm(np.ravel(b)))


ACCEPTANCE: dict[int, list[str]] = {}


def record(criterion: int, ok: bool, detail: str) -> None:
    """Store one acceptance line; printed in the terminal summary."""
    line = f"criterion {criterion:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE.setdefault(criterion, []).append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        for line in ACCEPTANCE[k]:
            terminalreporter.write_line(line)

