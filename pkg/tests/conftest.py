import pytest

from kubesdqn.harness import Scenario, trained_policy
from kubesdqn.schedulers import PolicyKind

LEARNED = [PolicyKind.SDQN, PolicyKind.SDQN_N, PolicyKind.LSTM, PolicyKind.TRANSFORMER]

# Lines appended by the acceptance tests, echoed in the terminal summary so
# they survive pytest's output capture.
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def scenario():
    return Scenario()


@pytest.fixture(scope="session")
def trained(scenario):
    """Learned policies trained once per session with the default seeds."""
    return {kind.value: trained_policy(kind, scenario) for kind in LEARNED}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
