import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def assert_self_consistent(outcome, p, delta):
    """``rejected == {i : p_i <= Delta_i(k_hat/m)}`` and ``|rejected| == k_hat``."""
    used = delta.at(outcome.k_hat)
    expected = np.flatnonzero(p <= used) if outcome.k_hat else np.array([], dtype=np.int64)
    assert np.array_equal(outcome.rejected, expected)
    assert outcome.rejected.size == outcome.k_hat


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_line():
    """Record a one-line PASS/FAIL verdict; lines are repeated in the terminal summary."""

    def record(number: int, ok: bool, detail: str) -> None:
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
