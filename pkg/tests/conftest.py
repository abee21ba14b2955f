import pytest

from lyapdisc.construction import choose_N, select_parameters


@pytest.fixture(scope="session")
def params_eps1():
    """σ=2, α=0.4, p=0.95, κ=0.1, ε=1 at its smallest feasible N."""
    return choose_N(select_parameters(2.0, 0.95, 0.4, 0.1, 1.0))[0]


@pytest.fixture(scope="session")
def params_eps2():
    return choose_N(select_parameters(2.0, 0.95, 0.4, 0.1, 2.0))[0]


@pytest.fixture(scope="session")
def params_q2():
    """A γ = 1/2 set with an infeasible N override, so tuple stages occur."""
    return choose_N(select_parameters(2 ** 0.85, 0.8, 1.0, 0.01, 1.0), N=4)[0]


def pytest_terminal_summary(terminalreporter):
    from tests import test_acceptance
    lines = getattr(test_acceptance, "LINES", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
