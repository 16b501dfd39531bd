import numpy as np
import pytest
from hypothesis import settings

from singular_toda.discretization import GridConfig, build_grid
from singular_toda.liouville_n import single_source, solve_n
from singular_toda.problem_model import SourceSet
from singular_toda.toda_operator import IterationConfig, solve

settings.register_profile("numeric", deadline=None, max_examples=50)
settings.load_profile("numeric")

# equilateral triangle of side 2 centred at the origin
EQUILATERAL = np.array([[0.0, 2.0 / np.sqrt(3.0)], [-1.0, -1.0 / np.sqrt(3.0)],
                        [1.0, -1.0 / np.sqrt(3.0)]])

_CRITERIA = []


@pytest.fixture
def criterion():
    """Record one acceptance line; the summary hook prints them all."""
    def record(number, passed, detail):
        line = f"{'PASS' if passed else 'FAIL'} criterion {number}: {detail}"
        _CRITERIA.append(line)
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)


def toda_equilateral(weight=0.6, tolerance=1e-8):
    s = SourceSet(EQUILATERAL, np.full((2, 3), weight))
    return solve(s, IterationConfig(tolerance=tolerance))


@pytest.fixture(scope="session")
def toda_run():
    return toda_equilateral()


@pytest.fixture(scope="session")
def bubble_runs():
    """Zero-source 2D solves at refinement levels 0 and 1."""
    out = []
    for level in (0, 1):
        s = single_source(0.0)
        out.append(solve_n(s, grid=build_grid(s, GridConfig(refine=level))))
    return out
