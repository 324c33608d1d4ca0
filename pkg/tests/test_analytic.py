import itertools
import math

import pytest

from teachdim.analytic import (
    BoundInputs,
    expected_visits_closed,
    expected_visits_recursion,
    neck_travel_steps,
    sarsa_worstcase_visits,
    step_upper_bound,
    tdim_bounds,
    tight_theta_level3,
)
from teachdim.errors import DomainError
from teachdim.learner import LearnerSpec, Rule
from teachdim.mdp import make_peacock

EPS_GRID = [i / 10 for i in range(10)]


def grid():
    for A in range(2, 11):
        for n in range(A):
            for eps in EPS_GRID:
                yield n, A, eps


class TestVisits:
    def test_worst_case_is_A_minus_1(self):
        for A in range(2, 9):
            for eps in EPS_GRID:
                assert expected_visits_closed(A - 1, A, eps) == pytest.approx(A - 1, abs=1e-12)

    def test_zero(self):
        assert expected_visits_closed(0, 5, 0.4) == 0

    def test_examples(self):
        assert expected_visits_closed(1, 3, 0.5) == pytest.approx(4 / 3)
        assert expected_visits_recursion(2, 3, 0.9) == pytest.approx(2)
        assert expected_visits_recursion(1, 4, 0.6) == pytest.approx(5 / 3)

    def test_closed_matches_recursion(self):
        for n, A, eps in grid():
            assert abs(expected_visits_closed(n, A, eps) - expected_visits_recursion(n, A, eps)) <= 1e-12

    def test_monotone(self):
        for A in range(2, 8):
            for eps in EPS_GRID:
                vals = [expected_visits_closed(n, A, eps) for n in range(A)]
                assert vals == sorted(vals)
            for n in range(A - 1):
                vals = [expected_visits_closed(n, A, e) for e in EPS_GRID]
                assert all(b >= a for a, b in zip(vals, vals[1:]))

    def test_domain(self):
        with pytest.raises(DomainError):
            expected_visits_closed(3, 3, 0.1)
        with pytest.raises(DomainError):
            expected_visits_recursion(0, 1, 0.1)


class TestBounds:
    def test_level3_examples(self):
        lo, hi = tdim_bounds(3, BoundInputs(8, 3, 6, 3, 0.2))
        assert lo == pytest.approx(4 * 2 * 6 * 1.953125) == pytest.approx(93.75)
        assert hi == pytest.approx(15 * 2 * 6 * 1.953125) == pytest.approx(351.5625)
        assert tdim_bounds(3, BoundInputs(8, 3, 6, 3, 0.0)) == (48, 180)

    def test_levels_1_2(self):
        b = BoundInputs(8, 3, 6, 3, 0.4)
        assert tdim_bounds(1, b) == (8, 8)
        assert tdim_bounds(2, b) == (16, 16)
        assert tdim_bounds(2, b, sarsa=True) == (16, 17)

    def test_level4_reduces_to_level3(self):
        for S, D, eps in itertools.product([6, 10, 20], [1, 2, 4], [0.0, 0.3]):
            b = BoundInputs(S, 3, 8, D, eps, 1.0)
            lo3, hi3 = tdim_bounds(3, b)
            lo4, hi4 = tdim_bounds(4, b)
            assert hi4 == hi3
            assert lo4 == pytest.approx(0.5 * (S - D) / (S - D - 1) * lo3)

    def test_level4_independent_coding(self):
        b = BoundInputs(9, 2, 8, 3, 0.1, 0.5)
        g = (1 / (0.5 * 0.9)) ** 3
        lo, hi = tdim_bounds(4, b)
        assert lo == pytest.approx(0.5 * 6 * 1 * 8 * g)
        assert hi == pytest.approx(17 * 1 * 8 * g)

    def test_level3_monotone(self):
        base = dict(S=10, A=3, H=8, D=3, epsilon=0.2)
        steps = {"S": 1, "A": 1, "H": 1, "epsilon": 0.1}
        for key, inc in steps.items():
            lo0, hi0 = tdim_bounds(3, BoundInputs(**base))
            lo1, hi1 = tdim_bounds(3, BoundInputs(**{**base, key: base[key] + inc}))
            assert lo1 > lo0 and hi1 > hi0, key
        # in D only the upper value grows: (S - D - 1) shrinks as D grows
        for D in range(1, 6):
            hi_a = tdim_bounds(3, BoundInputs(12, 3, 8, D, 0.2))[1]
            hi_b = tdim_bounds(3, BoundInputs(12, 3, 8, D + 1, 0.2))[1]
            assert hi_b > hi_a

    def test_domain(self):
        with pytest.raises(DomainError):
            BoundInputs(8, 3, 2, 3)
        with pytest.raises(DomainError):
            BoundInputs(8, 1, 6, 3)
        with pytest.raises(DomainError):
            tdim_bounds(3, BoundInputs(4, 3, 6, 3))
        with pytest.raises(DomainError):
            tdim_bounds(5, BoundInputs(8, 3, 6, 3))


class TestTightTheta:
    def test_eps0_limit(self):
        assert neck_travel_steps(6, 3, 0.0) == 18
        assert neck_travel_steps(6, 3, 1e-8) == pytest.approx(18, rel=1e-6)

    def test_two_codings(self):
        S, A, H, D, eps = 8, 3, 6, 3, 0.2
        lo, hi = tight_theta_level3(BoundInputs(S, A, H, D, eps))
        g = (1 / (1 - eps)) ** D
        extra = H * ((1 - eps) / eps) * (g - 1)
        assert lo == pytest.approx((S - D - 1) * (A - 1) * H * g + extra, rel=1e-12)
        assert hi == pytest.approx((2 * S - 1 - 2 * D) * (A - 1) * H * g + extra, rel=1e-12)
        # and the sum-of-geometric-terms form of the travel time
        travel = sum(H * (1 / (1 - eps)) ** i for i in range(D))
        assert extra == pytest.approx(travel, rel=1e-12)

    def test_grid(self):
        for D in range(1, 7):
            for S in range(D + 2, 51):
                for eps in EPS_GRID:
                    lo, hi = tight_theta_level3(BoundInputs(S, 3, D + 2, D, eps))
                    assert lo <= hi
                    # the ratio is at most 2 + 1/(S - D - 1) and approaches 2
                    assert hi / lo <= 2 + 1 / (S - D - 1) + 1e-12
                    if S - D - 1 >= 100:
                        assert hi / lo <= 2.01

    def test_ratio_large_instances(self):
        for D in range(1, 7):
            for eps in EPS_GRID:
                lo, hi = tight_theta_level3(BoundInputs(200, 4, 10, D, eps))
                assert hi / lo <= 2.01


class TestMisc:
    def test_sarsa_visits(self):
        assert sarsa_worstcase_visits(2) == 2 and sarsa_worstcase_visits(4) == 6

    def test_step_upper_bound(self):
        m = make_peacock(8, 3, 3, 6, 0.2)
        assert step_upper_bound(m, LearnerSpec(0.2), 3) == pytest.approx(351.5625)
        assert step_upper_bound(m, LearnerSpec(0.2, rule=Rule.SARSA), 3) == pytest.approx(703.125)
        assert step_upper_bound(m, LearnerSpec(0.0), 1) == 8
        assert math.isinf(step_upper_bound(m, LearnerSpec(1.0), 3))
