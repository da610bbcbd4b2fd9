import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pudetm.classify import (Prediction, accuracy, l1_posterior_distance, log_odds, posterior,
                             predict, predict_labels)
from pudetm.core import Theta
from pudetm.errors import DataError, DomainError


def theta_from(v, pi, p=2):
    return Theta(v[0], v[1], v[2:2 + p], v[2 + p:2 + 2 * p], pi)


params = st.lists(st.floats(-3, 3), min_size=6, max_size=6)
points = st.lists(st.floats(-5, 5), min_size=2, max_size=2)


class TestPosterior:
    def test_identical_components_give_pi(self):
        th = Theta(0.2, 0.2, [1.0, -1.0], [1.0, -1.0], 0.7)
        assert posterior(th, [0.3, 2.0]) == pytest.approx(0.7, rel=1e-14)

    def test_scalar_for_a_vector_array_for_a_matrix(self):
        th = Theta(0.0, 0.0, [1.0], [0.0], 0.5)
        assert isinstance(posterior(th, [0.0]), float)
        assert posterior(th, np.zeros((3, 1))).shape == (3,)

    def test_logistic_form(self):
        th = Theta(0.5, -0.5, [2.0], [1.0], 0.25)
        x = 0.7
        eta = np.log(0.25 / 0.75) + 1.0 + x
        assert posterior(th, [x]) == pytest.approx(1 / (1 + np.exp(-eta)), rel=1e-14)
        assert log_odds(th, [x])[0] == pytest.approx(eta, rel=1e-14)

    def test_extreme_inputs_saturate(self):
        th = Theta(0.0, 0.0, [1.0], [-1.0], 0.5)
        assert posterior(th, [800.0]) == 1.0
        assert posterior(th, [-800.0]) == 0.0

    def test_dimension_mismatch(self):
        with pytest.raises(DataError):
            posterior(Theta.null(2), [1.0, 2.0, 3.0])

    def test_non_finite_input(self):
        with pytest.raises(DataError):
            posterior(Theta.null(1), [np.nan])

    @given(params, st.floats(0.01, 0.99), points)
    def test_switch_complements(self, v, pi, x):
        th = theta_from(v, pi)
        assert posterior(th.switched(), x) == pytest.approx(1 - posterior(th, x), abs=1e-12)

    @given(params, st.floats(0.01, 0.98), st.floats(0.001, 0.5), points)
    def test_monotone_in_pi(self, v, pi, dpi, x):
        lo = theta_from(v, pi)
        hi = theta_from(v, min(pi + dpi, 0.99))
        assert posterior(hi, x) >= posterior(lo, x)

    @given(params, st.floats(0.01, 0.99), points)
    def test_in_unit_interval(self, v, pi, x):
        assert 0.0 <= posterior(theta_from(v, pi), x) <= 1.0


class TestLabels:
    def test_tie_goes_to_zero(self):
        th = Theta(0.0, 0.0, [1.0], [1.0], 0.5)
        assert predict_labels(th, [[3.0]])[0] == 0

    def test_threshold(self):
        th = Theta(0.0, 0.0, [1.0], [1.0], 0.7)
        assert predict_labels(th, [[0.0]], threshold=0.5)[0] == 1
        assert predict_labels(th, [[0.0]], threshold=0.8)[0] == 0

    def test_predict_records(self):
        th = Theta(0.0, 0.0, [1.0], [-1.0], 0.5)
        out = predict(th, [[2.0], [-2.0]])
        assert [p.label for p in out] == [1, 0]
        assert all(isinstance(p, Prediction) for p in out)
        assert out[0].phi == pytest.approx(posterior(th, [2.0]))


class TestAccuracy:
    def test_perfect_and_complemented(self):
        y = [1, 0, 1, 1, 0]
        assert accuracy(y, y) == 1.0
        assert accuracy([1 - v for v in y], y) == 0.0

    def test_accepts_prediction_records(self):
        preds = [Prediction(0.9, 1), Prediction(0.2, 0)]
        assert accuracy(preds, [1, 1]) == 0.5

    def test_empty_is_undefined(self):
        with pytest.raises(DomainError):
            accuracy([], [])

    def test_length_mismatch(self):
        with pytest.raises(DomainError):
            accuracy([1, 0], [1])


class TestL1Distance:
    def test_zero_against_itself(self, rng):
        th = Theta(0.1, -0.2, [0.5, 0.1], [-0.3, 0.2], 0.4)
        assert l1_posterior_distance(th, th, rng.normal(size=(50, 2))) == 0.0

    @given(params, params, st.floats(0.05, 0.95), st.floats(0.05, 0.95))
    @settings(max_examples=50)
    def test_bounded_and_symmetric(self, a, b, pa, pb):
        xs = np.random.default_rng(0).normal(size=(30, 2))
        ta, tb = theta_from(a, pa), theta_from(b, pb)
        d = l1_posterior_distance(ta, tb, xs)
        assert 0.0 <= d <= 1.0
        assert d == pytest.approx(l1_posterior_distance(tb, ta, xs), abs=1e-15)

    def test_empty_sample(self):
        with pytest.raises(DomainError):
            l1_posterior_distance(Theta.null(1), Theta.null(1), np.empty((0, 1)))
