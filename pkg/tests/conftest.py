"""Shared fixtures and the acceptance-report collector.

Acceptance tests register one line per criterion through the
``criterion_report`` fixture; the lines are echoed in the terminal
summary so the final pytest output always carries an explicit
pass/fail verdict for every numbered criterion.
"""

from __future__ import annotations

import numpy as np
import pytest

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


@pytest.fixture(scope="session")
def micro():
    """A tiny float64 model shared by read-only tests."""
    from gamsi.diagnostics import micro_model

    return micro_model(seed=0)
