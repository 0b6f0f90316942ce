import numpy as np
import pytest

from rankirl.experiments import build_gridworld, rank_policies, run_gridworld_comparison


@pytest.fixture(scope="session")
def grid():
    return build_gridworld()


@pytest.fixture(scope="session")
def grid_policies(grid):
    return rank_policies(grid)


@pytest.fixture(scope="session")
def small_comparison():
    """Default gridworld with three baseline seeds (exact feature expectations)."""
    return run_gridworld_comparison(n_baseline_seeds=3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_acceptance_lines: list[str] = []


@pytest.fixture
def verdict():
    """Record a PASS/FAIL line for an acceptance criterion; echoed in the terminal summary."""

    def record(label: str, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'} criterion {label}: {detail}"
        print(line)
        _acceptance_lines.append(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in _acceptance_lines:
            terminalreporter.write_line(line)
