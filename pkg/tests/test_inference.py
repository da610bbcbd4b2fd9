import numpy as np
import pytest

from pudetm.errors import DomainError, NumericalError
from pudetm.estimation import DETM, SETM, FitOptions, fit
from pudetm.inference import (_clamp_elr, asymptotic_covariance, ci_pi, elr_curve, elr_pi,
                              gof_test_scar, h_contributions, h_gradient_analytic, h_gradient_fd,
                              parameter_names)
from pudetm.likelihood import solve_lagrange
from pudetm.numerics import chi2_quantile, chi2_sf

OPTS = FitOptions(n_starts=3, seed=0, tol=1e-9)


@pytest.fixture(scope="module")
def full(small_ds):
    return fit(small_ds, DETM, OPTS)


def packed(ds, fr):
    lam = solve_lagrange(ds, fr.theta)
    th = fr.theta
    return np.concatenate([[lam.lambda1, lam.lambda2, th.alpha1, th.alpha2], th.beta1, th.beta2,
                           [th.pi]])


@pytest.fixture(scope="module")
def result(small_ds):
    return gof_test_scar(small_ds, OPTS)


class TestGoodnessOfFit:
    def test_statistic_and_df(self, small_ds, result):
        assert result.statistic >= 0.0
        assert result.df == small_ds.p

    def test_p_value_is_the_chi_square_tail(self, result):
        assert result.p_value == chi2_sf(result.statistic, result.df)
        assert result.reject_at_0_05 == (result.p_value < 0.05)
        assert result.decision in ("reject", "retain")

    def test_statistic_is_twice_the_gap(self, result):
        gap = result.fit_full.profile_log_el - result.fit_null.profile_log_el
        assert result.statistic == pytest.approx(max(2.0 * gap, 0.0), abs=1e-12)

    def test_rejects_a_shifted_positive_component(self, sar_ds):
        assert gof_test_scar(sar_ds, OPTS).reject_at_0_05

    def test_reuses_a_given_full_fit(self, small_ds, full):
        tr = gof_test_scar(small_ds, OPTS, full=full)
        assert tr.fit_full.profile_log_el >= full.profile_log_el - 1e-12


class TestFixedPi:
    def test_zero_at_the_estimate(self, small_ds, full):
        assert elr_pi(small_ds, full.pi, OPTS, full=full) == pytest.approx(0.0, abs=1e-6)

    def test_curve_is_non_negative(self, small_ds, full):
        grid = np.linspace(0.05, 0.95, 20)
        pts = elr_curve(small_ds, grid, OPTS, full=full)
        assert [g for g, _ in pts] == list(grid)
        assert all(r >= 0.0 for _, r in pts)

    def test_grows_away_from_the_estimate(self, small_ds, full):
        lo = elr_pi(small_ds, max(full.pi - 0.3, 0.02), OPTS, full=full)
        hi = elr_pi(small_ds, min(full.pi + 0.3, 0.98), OPTS, full=full)
        near = elr_pi(small_ds, full.pi + 0.01, OPTS, full=full)
        assert near < lo and near < hi

    @pytest.mark.parametrize("pi0", [0.0, 1.0, -0.5, float("nan")])
    def test_domain(self, small_ds, full, pi0):
        with pytest.raises(DomainError):
            elr_pi(small_ds, pi0, OPTS, full=full)

    def test_setm_profile(self, small_ds):
        setm = fit(small_ds, SETM, OPTS)
        assert elr_pi(small_ds, setm.pi, OPTS, full=setm, spec=SETM) == pytest.approx(0.0, abs=1e-6)


class TestClamp:
    def test_non_negative_passes(self):
        assert _clamp_elr(0.3, "x") == 0.3

    def test_noise_is_zeroed(self):
        assert _clamp_elr(-5e-9, "x") == 0.0

    def test_real_negative_raises(self):
        with pytest.raises(NumericalError, match="multistart"):
            _clamp_elr(-1e-3, "x")


@pytest.fixture(scope="module")
def ci95(small_ds, full):
    return ci_pi(small_ds, 0.95, OPTS, full=full, record_curve=True)


class TestConfidenceInterval:
    def test_contains_the_estimate(self, ci95):
        assert ci95.lower <= ci95.pi_hat <= ci95.upper
        assert ci95.contains(ci95.pi_hat)

    def test_ends_sit_on_the_critical_value(self, small_ds, full, ci95):
        q = chi2_quantile(0.95, 1)
        assert ci95.critical_value == pytest.approx(q)
        for end, open_ in ((ci95.lower, ci95.lower_open), (ci95.upper, ci95.upper_open)):
            if not open_:
                assert elr_pi(small_ds, end, OPTS, full=full) == pytest.approx(q, abs=1e-3)

    def test_nested_levels(self, small_ds, full, ci95):
        ci90 = ci_pi(small_ds, 0.90, OPTS, full=full)
        assert ci95.lower <= ci90.lower + 1e-9
        assert ci90.upper <= ci95.upper + 1e-9

    def test_recorded_curve(self, ci95):
        pis = [p for p, _ in ci95.curve]
        assert pis == sorted(pis)
        assert (ci95.pi_hat, 0.0) in ci95.curve

    def test_level_domain(self, small_ds, full):
        for level in (0.3, 1.0):
            with pytest.raises(DomainError):
                ci_pi(small_ds, level, OPTS, full=full)


class TestCovariance:
    def test_analytic_gradient_matches_differences(self, small_ds, full):
        u = packed(small_ds, full)
        G = h_gradient_analytic(small_ds, u)
        F = h_gradient_fd(small_ds, u)
        np.testing.assert_allclose(G, F, rtol=1e-5, atol=1e-6)

    def test_contributions_sum_to_the_profile(self, small_ds, full):
        u = packed(small_ds, full)
        assert h_contributions(small_ds, u).sum() == pytest.approx(full.profile_log_el, rel=1e-10)

    def test_gradient_vanishes_at_the_estimate(self, small_ds, full):
        total = h_gradient_fd(small_ds, packed(small_ds, full)).sum(axis=0)
        assert np.max(np.abs(total)) <= 1e-3 * small_ds.N

    def test_sandwich_properties(self, small_ds, full):
        cov = asymptotic_covariance(small_ds, full)
        S = cov.sigma
        d = 2 * small_ds.p + 5
        assert S.shape == (d, d)
        assert cov.names == parameter_names(small_ds.p)
        np.testing.assert_allclose(S, S.T, rtol=1e-8, atol=0.0)
        assert np.all(np.diag(S) >= -1e-8 * np.abs(S).max())
        se = cov.std_error("pi")
        assert 0.0 < se < 0.5

    def test_needs_the_two_tilt_fit(self, small_ds):
        setm = fit(small_ds, SETM, OPTS)
        with pytest.raises(DomainError):
            asymptotic_covariance(small_ds, setm)
