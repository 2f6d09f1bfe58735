import numpy as np
import pytest
from scipy.special import gammaln, logsumexp
from scipy.special import digamma as scipy_digamma
from scipy.special import polygamma

from vblink.numerics import digamma, log_sum_exp, trigamma

# Arbitrary-precision reference values (mpmath, 30 significant digits).
DIGAMMA_REFERENCE = {
    1.0: -0.5772156649015329,
    0.5: -1.9635100260214235,
    2.0: 0.42278433509846713,
    0.01: -100.56088545786868,
    3.7: 1.1671535393615113,
    9.999: 2.2516474172057355,  # just below the series cutover
    10.0: 2.251752589066721,
    147.25: 4.988732393476712,
}
TRIGAMMA_REFERENCE = {
    1.0: 1.6449340668482264,
    0.5: 4.934802200544679,
    0.01: 10001.621213528313,
    3.7: 0.3100378576700383,
    9.999: 0.10517738667672887,
    147.25: 0.006814283683096631,
}


class TestDigamma:
    def test_reference_values(self):
        for x, want in DIGAMMA_REFERENCE.items():
            assert digamma(x) == pytest.approx(want, abs=1e-12)

    def test_recurrence_identity(self):
        assert digamma(2.0) - digamma(1.0) == pytest.approx(1.0, abs=1e-12)
        for x in (0.03, 0.7, 4.2, 33.0):
            assert digamma(x + 1.0) - digamma(x) == pytest.approx(
                1.0 / x, rel=1e-12
            )

    def test_agrees_with_scipy_on_grid(self):
        x = np.geomspace(1e-3, 500.0, 200)
        np.testing.assert_allclose(digamma(x), scipy_digamma(x), atol=1e-12)

    def test_matches_log_gamma_finite_difference(self):
        h = 1e-5
        for x in np.geomspace(0.01, 50.0, 40):
            fd = (gammaln(x + h) - gammaln(x - h)) / (2.0 * h)
            assert digamma(x) == pytest.approx(fd, rel=1e-5)

    def test_vectorized_and_scalar_types(self):
        out = digamma(np.array([[1.0, 2.0], [0.5, 10.0]]))
        assert out.shape == (2, 2)
        assert isinstance(digamma(1.5), float)

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            digamma(0.0)
        with pytest.raises(ValueError):
            digamma(-2.5)
        with pytest.raises(ValueError):
            digamma(np.array([1.0, -1.0]))


class TestTrigamma:
    def test_reference_values(self):
        for x, want in TRIGAMMA_REFERENCE.items():
            assert trigamma(x) == pytest.approx(want, rel=1e-10)

    def test_recurrence_identity(self):
        for x in (0.05, 0.9, 6.5):
            assert trigamma(x) - trigamma(x + 1.0) == pytest.approx(
                1.0 / x**2, rel=1e-10
            )

    def test_agrees_with_scipy_on_grid(self):
        x = np.geomspace(1e-3, 500.0, 200)
        np.testing.assert_allclose(trigamma(x), polygamma(1, x), rtol=1e-10)

    def test_positive_everywhere(self):
        x = np.geomspace(1e-3, 100.0, 500)
        assert np.all(trigamma(x) > 0.0)

    def test_matches_digamma_finite_difference(self):
        h = 1e-5
        for x in np.geomspace(0.01, 50.0, 40):
            fd = (digamma(x + h) - digamma(x - h)) / (2.0 * h)
            assert trigamma(x) == pytest.approx(fd, rel=1e-5)

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            trigamma(0.0)
        with pytest.raises(ValueError):
            trigamma(-1.0)


class TestLogSumExp:
    def test_two_zeros_is_log_two(self):
        assert log_sum_exp([0.0, 0.0]) == pytest.approx(
            0.6931471805599453, abs=1e-15
        )

    def test_single_element_identity(self):
        for x in (-700.0, -1.0, 0.0, 3.25, 700.0):
            assert log_sum_exp([x]) == x

    def test_shift_invariance(self):
        v = np.array([-3.0, 0.5, 2.0, 1.0])
        for c in (-500.0, -1.0, 250.0):
            assert log_sum_exp(v + c) == pytest.approx(
                log_sum_exp(v) + c, rel=1e-14
            )

    def test_no_overflow_for_large_inputs(self):
        out = log_sum_exp([700.0, 700.0, 699.0])
        assert np.isfinite(out)
        assert out == pytest.approx(logsumexp([700.0, 700.0, 699.0]), rel=1e-15)

    def test_monotone_in_each_argument(self):
        assert log_sum_exp([0.1, 1.0]) > log_sum_exp([0.0, 1.0])

    def test_minus_infinity_entries(self):
        assert log_sum_exp([-np.inf, 0.0]) == pytest.approx(0.0, abs=1e-15)
        assert log_sum_exp([-np.inf, -np.inf]) == -np.inf

    def test_axis_matches_scipy(self):
        rng = np.random.default_rng(5)
        m = rng.normal(size=(6, 9)) * 300.0
        np.testing.assert_allclose(
            log_sum_exp(m, axis=1), logsumexp(m, axis=1), rtol=1e-14
        )
        np.testing.assert_allclose(
            log_sum_exp(m, axis=0), logsumexp(m, axis=0), rtol=1e-14
        )

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            log_sum_exp([])
