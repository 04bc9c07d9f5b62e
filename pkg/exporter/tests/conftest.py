"""Fixtures for the exporter suite.

The whole directory skips cleanly when the exporter package is not
installed, so the training core's suite stays runnable on its own.
The ``criterion_report`` fixture mirrors the core suite's: integration
tests print one explicit pass/fail line per numbered criterion.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

expert_exporter = pytest.importorskip(
    "expert_exporter", reason="secondary exporter package not installed"
)

FIXTURES = Path(__file__).parent / "fixtures"

_CRITERION_LINES: list[str] = []


@pytest.fixture(scope="session")
def criterion_report():
    """Callable: record one verdict line for a numbered criterion."""

    def record(number: int, passed: bool, detail: str = "") -> None:
        verdict = "PASS" if passed else "FAIL"
        suffix = f" — {detail}" if detail else ""
        line = f"CRITERION {number}: {verdict}{suffix}"
        _CRITERION_LINES.append(line)
        print(line)
        if not passed:
            pytest.fail(line)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _CRITERION_LINES:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for line in sorted(_CRITERION_LINES):
        terminalreporter.write_line(line)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)


@pytest.fixture()
def scene_ppm() -> Path:
    path = FIXTURES / "scene.ppm"
    assert path.exists(), f"checked-in fixture missing: {path}"
    return path
