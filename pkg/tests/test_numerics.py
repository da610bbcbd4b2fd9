import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pudetm.errors import DomainError, NonConvergenceError, SingularMatrixError
from pudetm.numerics import (NewtonOptions, chi2_cdf, chi2_quantile, chi2_sf, damped_newton,
                             regularized_gamma, solve_spd)


def mp_upper_gamma(a, x):
    mpmath.mp.dps = 40
    return float(mpmath.gammainc(a, x, mpmath.inf, regularized=True))


class TestSolveSPD:
    def test_identity(self):
        np.testing.assert_array_equal(solve_spd(np.eye(2), [3.0, 4.0]), [3.0, 4.0])

    def test_two_by_two(self):
        np.testing.assert_allclose(solve_spd([[4.0, 2.0], [2.0, 3.0]], [2.0, 1.0]), [0.5, 0.0],
                                   atol=1e-15)

    def test_indefinite_reports_pivot(self):
        with pytest.raises(SingularMatrixError) as exc:
            solve_spd([[1.0, 2.0], [2.0, 1.0]], [1.0, 1.0])
        assert exc.value.pivot == 1

    def test_zero_matrix_pivot_zero(self):
        with pytest.raises(SingularMatrixError) as exc:
            solve_spd(np.zeros((3, 3)), np.ones(3))
        assert exc.value.pivot == 0

    def test_non_square(self):
        with pytest.raises(DomainError):
            solve_spd(np.ones((2, 3)), np.ones(2))

    def test_random_systems_residual(self, rng):
        for _ in range(1000):
            d = int(rng.integers(1, 41))
            M = rng.normal(size=(d, d))
            A = M @ M.T + d * np.eye(d)
            b = rng.normal(size=d)
            x = solve_spd(A, b)
            assert np.linalg.norm(A @ x - b) <= 1e-8 * np.linalg.norm(b)


class TestChiSquare:
    def test_zero_statistic(self):
        assert chi2_sf(0.0, 1) == 1.0
        assert chi2_cdf(0.0, 7) == 0.0

    @pytest.mark.parametrize("x, df", [(3.84146, 1), (31.410, 20)])
    def test_five_percent_points(self, x, df):
        assert chi2_sf(x, df) == pytest.approx(0.05, abs=1e-4)

    def test_df_two_is_exponential(self):
        for x in (0.1, 1.0, 7.5, 40.0):
            assert chi2_sf(x, 2) == pytest.approx(math.exp(-x / 2), rel=1e-13)

    @pytest.mark.parametrize("df", [0, -1, 1.5])
    def test_bad_df(self, df):
        with pytest.raises(DomainError):
            chi2_sf(1.0, df)

    def test_negative_statistic(self):
        with pytest.raises(DomainError):
            chi2_sf(-1.0, 3)

    def test_against_mpmath(self, rng):
        for _ in range(300):
            a = float(rng.uniform(0.5, 40.0))
            x = float(rng.uniform(0.0, 3.0) * a + rng.uniform(0, 2))
            q = regularized_gamma(a, x)[1]
            assert q == pytest.approx(mp_upper_gamma(a, x), abs=1e-12, rel=1e-10)

    @given(st.floats(0.0, 300.0), st.integers(1, 60))
    def test_sf_plus_cdf_is_one(self, x, df):
        assert chi2_sf(x, df) + chi2_cdf(x, df) == pytest.approx(1.0, abs=1e-14)

    @given(st.floats(0.0, 200.0), st.floats(0.0, 50.0), st.integers(1, 40))
    def test_sf_is_non_increasing(self, x, dx, df):
        assert chi2_sf(x + dx, df) <= chi2_sf(x, df) + 1e-15


class TestChiSquareQuantile:
    def test_known_values(self):
        assert chi2_quantile(0.95, 1) == pytest.approx(3.841458820694124, rel=1e-12)
        assert chi2_quantile(0.5, 2) == pytest.approx(2 * math.log(2), rel=1e-12)
        assert chi2_quantile(0.90, 1) == pytest.approx(2.705543454095404, rel=1e-12)

    @pytest.mark.parametrize("q", [0.0, 1.0, -0.2, 1.5])
    def test_domain(self, q):
        with pytest.raises(DomainError):
            chi2_quantile(q, 1)

    @given(st.floats(0.001, 0.999), st.floats(0.0005, 0.1), st.integers(1, 30))
    @settings(max_examples=50)
    def test_monotone_in_level(self, q, dq, df):
        q2 = min(q + dq, 0.9995)
        assert chi2_quantile(q2, df) >= chi2_quantile(q, df)

    @given(st.floats(0.001, 0.999), st.integers(1, 30))
    @settings(max_examples=50)
    def test_inverts_cdf(self, q, df):
        assert chi2_cdf(chi2_quantile(q, df), df) == pytest.approx(q, abs=1e-10)


def quadratic(A, b):
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)

    def obj(x):
        return -0.5 * x @ A @ x + b @ x, b - A @ x, -A
    return obj


def logistic(x, y):
    def obj(beta):
        eta = x * beta[0]
        p = 1.0 / (1.0 + np.exp(-eta))
        v = float(np.sum(y * eta - np.logaddexp(0.0, eta)))
        return v, np.array([np.sum((y - p) * x)]), np.array([[-np.sum(p * (1 - p) * x * x)]])
    return obj


def neg_rosenbrock(v):
    x, y = v
    f = -((1 - x) ** 2 + 100 * (y - x * x) ** 2)
    g = -np.array([-2 * (1 - x) - 400 * x * (y - x * x), 200 * (y - x * x)])
    H = -np.array([[2 - 400 * (y - x * x) + 800 * x * x, -400 * x], [-400 * x, 200.0]])
    return f, g, H


class TestDampedNewton:
    def test_quadratic_in_one_step(self):
        A = np.array([[3.0, 1.0], [1.0, 2.0]])
        res = damped_newton(quadratic(A, [1.0, -1.0]), np.zeros(2))
        assert res.n_iter <= 2
        np.testing.assert_allclose(res.x, np.linalg.solve(A, [1.0, -1.0]), atol=1e-12)

    def test_separable_logistic_does_not_report_convergence(self):
        x = np.array([-2.0, -1.0, 1.0, 2.0])
        y = np.array([0.0, 0.0, 1.0, 1.0])
        with pytest.raises(NonConvergenceError) as exc:
            damped_newton(logistic(x, y), np.zeros(1))
        assert exc.value.last_iterate[0] > 10

    def test_overlapping_logistic_converges(self):
        x = np.array([-2.0, -1.0, 1.0, 2.0, 0.5])
        y = np.array([0.0, 1.0, 0.0, 1.0, 1.0])
        res = damped_newton(logistic(x, y), np.zeros(1))
        assert abs(res.grad[0]) <= 1e-10

    def test_rosenbrock(self):
        res = damped_newton(neg_rosenbrock, np.array([0.8, 0.6]), NewtonOptions(max_iter=200))
        np.testing.assert_allclose(res.x, [1.0, 1.0], atol=1e-8)
        assert np.max(np.abs(res.grad)) <= 1e-10

    def test_iterates_never_decrease(self):
        seen = []

        def obj(x):
            out = neg_rosenbrock(x)
            seen.append(out[0])
            return out
        res = damped_newton(obj, np.array([0.8, 0.6]), NewtonOptions(max_iter=200))
        assert res.value >= seen[0]
        assert res.value == max(seen)

    def test_infeasible_start(self):
        with pytest.raises(DomainError):
            damped_newton(lambda x: (-np.inf, x, -np.eye(1)), np.zeros(1))

    def test_options_validated(self):
        with pytest.raises(DomainError):
            NewtonOptions(max_iter=0)
        with pytest.raises(DomainError):
            NewtonOptions(grad_tol=0.0)
