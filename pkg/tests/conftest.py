import pytest

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report():
    """Record one acceptance line; printed in the terminal summary."""

    def _record(criterion: int, passed: bool, detail: str) -> None:
        ACCEPTANCE_LINES.append(f"criterion {criterion:2d}: {'PASS' if passed else 'FAIL'}  {detail}")

    return _record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


from fractions import Fraction  # noqa: E402

from qusense.dynamics import NoiseModel  # noqa: E402
from qusense.model import build_qudit_model  # noqa: E402
from qusense.protocol import build_logical_system  # noqa: E402

_SYSTEMS = {}


def logical_system(S):
    """Default logical system for spin S (T2 = 50 us, code at 500 ns), built once per session."""
    S = Fraction(S)
    if S not in _SYSTEMS:
        _SYSTEMS[S] = build_logical_system(build_qudit_model(S), NoiseModel(t2=50e-6), 500e-9)
    return _SYSTEMS[S]


@pytest.fixture(scope="session")
def systems():
    return logical_system
