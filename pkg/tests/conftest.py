import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment

from kerrcoupler.model import CouplerParams

CRITERIA_RESULTS = {}


def canonical(chi=1e-6, eps=1000.0):
    return CouplerParams.symmetric_set(eps, gamma=1.0, delta=10.0, chi=chi, J=10.0)


@pytest.fixture
def canonical_params():
    return canonical()


def multiset_distance(a, b):
    """Largest pairwise gap after optimally matching two equal-size multisets."""
    a, b = np.asarray(a), np.asarray(b)
    D = np.abs(a[:, None] - b[None, :])
    r, c = linear_sum_assignment(D)
    return float(D[r, c].max())


def record_criterion(number, passed, detail):
    line = f"CRITERION {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    CRITERIA_RESULTS[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(CRITERIA_RESULTS):
        terminalreporter.write_line(CRITERIA_RESULTS[k])
