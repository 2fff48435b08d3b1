from __future__ import annotations

import pytest

from pmsm_uq.config import default_machine
from pmsm_uq.simulation import MachineModel

# (criterion number, passed, detail) recorded by the acceptance suite
ACCEPTANCE_LINES: list[tuple[int, bool, str]] = []


@pytest.fixture(scope="session")
def spec():
    return default_machine()


@pytest.fixture(scope="session")
def coarse_model(spec):
    return MachineModel(spec, refinement=0)


@pytest.fixture(scope="session")
def coarse_nominal(coarse_model):
    return coarse_model.simulate()


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number, ok, detail in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
