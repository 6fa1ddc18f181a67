import pytest
from hypothesis import HealthCheck, settings

from zvonkin.catalog import linear_problem, rough_problem
from zvonkin.resolvent import solve_resolvent_fd
from zvonkin.transform import build_transform

settings.register_profile(
    "suite", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("suite")


# shared expensive artifacts: one fine-grid solve per testbed, reused by the
# module tests and the acceptance gate alike

@pytest.fixture(scope="session")
def lin_problem():
    return linear_problem(beta=1.0, s=1.0, x0=0.5, horizon=1.0)


@pytest.fixture(scope="session")
def lin_solution(lin_problem):
    return solve_resolvent_fd(lin_problem, 10.0, radius=12.0, h=0.01)


@pytest.fixture(scope="session")
def lin_transform(lin_solution, lin_problem):
    return build_transform(lin_solution, lin_problem)


@pytest.fixture(scope="session")
def rough_prob():
    return rough_problem()


@pytest.fixture(scope="session")
def rough_solution(rough_prob):
    return solve_resolvent_fd(rough_prob, 10.0, radius=10.0, h=0.01)


@pytest.fixture(scope="session")
def rough_transform(rough_solution, rough_prob):
    return build_transform(rough_solution, rough_prob)


# acceptance reporting: every criterion prints one PASS/FAIL line, repeated
# in the terminal summary so it survives pytest's output capture

_acceptance_rows: list[str] = []


@pytest.fixture
def acceptance():
    def record(tag: str, ok: bool, detail: str) -> None:
        row = f"[{tag}] {'PASS' if ok else 'FAIL'} {detail}"
        _acceptance_rows.append(row)
        print(row)
        assert ok, row
    return record


def pytest_terminal_summary(terminalreporter):
    if _acceptance_rows:
        terminalreporter.write_sep("-", "acceptance criteria")
        for row in _acceptance_rows:
            terminalreporter.write_line(row)
