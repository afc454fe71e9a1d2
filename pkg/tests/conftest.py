import itertools
from fractions import Fraction

import numpy as np
import pytest

from sublsq import Problem

SIX_T = np.arange(6.0)
SIX_B = np.array([2.0, -1.0, 3.0, 0.0, 5.0, 1.0])
# exact E[beta | s1 > 0] over the 210 nonsingular ordered 3-draws, from enumerate_expected_beta
SIX_EXPECTED = (Fraction(333271, 363090), Fraction(280543, 907725))

_acceptance_lines: list[str] = []


def six_point_problem(replace=True):
    """Omega = {0..5}, basis (1, t), target b: a six-point straight-line fit."""
    A = np.column_stack([np.ones(6), SIX_T])
    return Problem.from_matrix(A, SIX_B, replace=replace, name="six-point")


def enumerate_expected_beta(t, b, m):
    """Mean of the exact subproblem solutions over all M^m ordered draws with s1 > 0.

    Basis (1, t); the 2x2 normal equations are solved in rationals.
    """
    total = [Fraction(0), Fraction(0)]
    count = 0
    for idx in itertools.product(range(len(t)), repeat=m):
        ts = [Fraction(int(t[i])) for i in idx]
        fs = [Fraction(int(b[i])) for i in idx]
        s1, s2 = sum(ts), sum(x * x for x in ts)
        det = m * s2 - s1 * s1
        if det == 0:
            continue
        r0, r1 = sum(fs), sum(x * y for x, y in zip(ts, fs))
        total[0] += (s2 * r0 - s1 * r1) / det
        total[1] += (m * r1 - s1 * r0) / det
        count += 1
    return tuple(x / count for x in total), count


@pytest.fixture
def six_problem():
    return six_point_problem()


def record_acceptance(line: str) -> None:
    print(line)
    _acceptance_lines.append(line)


def pytest_terminal_summary(terminalreporter):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in _acceptance_lines:
            terminalreporter.write_line(line)
