from pathlib import Path

import numpy as np
import pytest

from gcsage.channel import FrequencyGrid
from gcsage.geometry import SearchGrid
from gcsage.scenario import ArrayLayout, Environment, Facet, load_scenario

SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"


def wall(x0, y0, x1, y1, mechanism="specular", reflectivity=0.7, name=""):
    """Vertical facet over z in [-1, 1] above the segment (x0, y0) -> (x1, y1)."""
    return Facet(np.array([[x0, y0, -1.0], [x1, y1, -1.0], [x1, y1, 1.0], [x0, y0, 1.0]]), mechanism,
                 reflectivity, name)


@pytest.fixture
def band():
    return FrequencyGrid(29.5e9, 10e6, 101)


@pytest.fixture
def small_band():
    return FrequencyGrid(29.9e9, 20e6, 21)


@pytest.fixture
def small_arrays():
    lam = 0.01
    tx = np.array([[1.0 + k * lam / 2, 0.0, 0.0] for k in range(3)])
    rx = np.array([[2.0 + k * lam, 0.0, 0.0] for k in range(8)])
    return ArrayLayout(tx, rx, 0, 0)


@pytest.fixture
def flat_grid():
    return SearchGrid(np.array([[-0.25, 4.25], [-0.25, 4.25], [-0.05, 0.05]]), 0.1)


@pytest.fixture(scope="session")
def case1():
    return load_scenario(SCENARIOS / "case1.toml")


@pytest.fixture(scope="session")
def case1_desk():
    return load_scenario(SCENARIOS / "case1_desk.toml")


@pytest.fixture(scope="session")
def case2():
    return load_scenario(SCENARIOS / "case2.toml")


@pytest.fixture
def empty_env():
    return Environment([], [], [], np.array([[-1.0, 5.0], [-1.0, 5.0], [-0.05, 0.05]]))


ACCEPTANCE_LINES = []


@pytest.fixture
def verdict():
    """Record one pass/fail line per acceptance criterion for the terminal summary."""

    def record(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
