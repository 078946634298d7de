from __future__ import annotations

import numpy as np
import pytest

from aosearch.terrain import CameraIntrinsics, ElevationModel

ACCEPTANCE_LINES: list[str] = []


def report(criterion: str, passed: bool, detail: str) -> None:
    """Record one acceptance verdict; printed again in the terminal summary."""
    line = f"[{'PASS' if passed else 'FAIL'}] {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


@pytest.fixture(scope="session")
def flat_dem():
    return ElevationModel.flat(-60.0, -60.0, 60.0, 60.0, 0.0)


@pytest.fixture(scope="session")
def small_intr():
    return CameraIntrinsics(resolution_px=96)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
