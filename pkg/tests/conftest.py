"""Shared fixtures plus the acceptance summary printed at session end."""
from pathlib import Path

import numpy as np
import pytest

from sfsync import AgentModel

ROOT = Path(__file__).resolve().parents[1]
SCENARIOS = ROOT / "scenarios"

ACCEPTANCE = {}


def record(number, title, ok, detail=""):
    """Store one acceptance verdict; the test asserts on ``ok`` afterwards."""
    line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}"
    if detail:
        line += f"  [{detail}]"
    ACCEPTANCE[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])


@pytest.fixture
def triple():
    A = np.diag([1.0, 1.0], 1)
    return AgentModel(A, [[0], [0], [1]], np.eye(3))


@pytest.fixture
def triple_partial():
    A = np.diag([1.0, 1.0], 1)
    return AgentModel(A, [[0], [0], [1]], [[1, 0, 0]])


@pytest.fixture
def oscillator():
    return AgentModel([[0, 1], [-1, 0]], [[0], [1]], np.eye(2))


@pytest.fixture
def scenario_dir():
    return SCENARIOS
