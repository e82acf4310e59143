import math

import numpy as np
import pytest
import scipy.integrate
import scipy.special
import scipy.stats
from hypothesis import given, settings
from hypothesis import strategies as st

from retroid.errors import ValidationError
from retroid.stats import (
    regularized_incomplete_beta,
    t_cdf,
    ttest_two_sample,
    two_tailed_p,
)

from fixtures import PUBLISHED_BACKWARD_MEANS, PUBLISHED_FORWARD_MEANS


def t_pdf(x, df):
    return (
        math.gamma((df + 1) / 2)
        / (math.sqrt(df * math.pi) * math.gamma(df / 2))
        * (1 + x * x / df) ** (-(df + 1) / 2)
    )


def p_by_quadrature(t, df):
    """Independent oracle: two-tailed p by numerical integration of the pdf."""
    tail, _ = scipy.integrate.quad(t_pdf, abs(t), np.inf, args=(df,))
    return 2.0 * tail


class TestTDistribution:
    def test_zero_t_gives_p_one_exactly(self):
        assert two_tailed_p(0.0, 6) == 1.0

    def test_cauchy_closed_form(self):
        # df=1 is Cauchy: CDF(1) = 3/4, so the two-tailed p at t=1 is 1/2.
        assert abs(t_cdf(1.0, 1) - 0.75) < 1e-9
        assert abs(two_tailed_p(1.0, 1) - 0.5) < 1e-9

    def test_cdf_symmetry(self):
        for t in (0.3, 1.7, 4.2):
            assert abs(t_cdf(t, 7) + t_cdf(-t, 7) - 1.0) < 1e-12

    def test_p_matches_quadrature_oracle(self, rng):
        for _ in range(40):
            t = float(rng.uniform(-6, 6))
            df = int(rng.integers(1, 51))
            assert abs(two_tailed_p(t, df) - p_by_quadrature(t, df)) < 1e-6

    def test_incomplete_beta_against_scipy(self, rng):
        for _ in range(60):
            a = float(rng.uniform(0.3, 30))
            b = float(rng.uniform(0.3, 30))
            x = float(rng.uniform(0, 1))
            ours = regularized_incomplete_beta(a, b, x)
            ref = scipy.special.betainc(a, b, x)
            assert abs(ours - ref) < 1e-10

    def test_invalid_inputs(self):
        with pytest.raises(ValidationError):
            regularized_incomplete_beta(0.0, 1.0, 0.5)
        with pytest.raises(ValidationError):
            regularized_incomplete_beta(1.0, 1.0, 1.5)
        with pytest.raises(ValidationError):
            two_tailed_p(1.0, 0)


class TestTwoSampleTTest:
    def test_identical_samples(self):
        result = ttest_two_sample([0.2, 0.4, 0.3], [0.2, 0.4, 0.3])
        assert result.t_stat == 0.0
        assert result.p_value == 1.0
        assert result.df == 4.0

    def test_published_mean_rows(self):
        result = ttest_two_sample(PUBLISHED_FORWARD_MEANS, PUBLISHED_BACKWARD_MEANS)
        assert result.df == 6.0
        assert abs(result.t_stat - 0.685) < 0.005
        assert abs(result.p_value - 0.519) < 0.005

    def test_matches_scipy_pooled(self, rng):
        for _ in range(50):
            a = rng.normal(0, 1, size=int(rng.integers(2, 9))).tolist()
            b = rng.normal(0.3, 1.5, size=int(rng.integers(2, 9))).tolist()
            ours = ttest_two_sample(a, b)
            ref = scipy.stats.ttest_ind(a, b)
            assert abs(ours.t_stat - ref.statistic) < 1e-10
            assert abs(ours.p_value - ref.pvalue) < 1e-10

    def test_matches_scipy_welch(self, rng):
        for _ in range(30):
            a = rng.normal(0, 1, size=int(rng.integers(2, 9))).tolist()
            b = rng.normal(0.3, 2.5, size=int(rng.integers(2, 9))).tolist()
            ours = ttest_two_sample(a, b, welch=True)
            ref = scipy.stats.ttest_ind(a, b, equal_var=False)
            assert abs(ours.t_stat - ref.statistic) < 1e-10
            assert abs(ours.p_value - ref.pvalue) < 1e-10

    @settings(max_examples=60, deadline=None)
    @given(
        st.lists(st.floats(-10, 10), min_size=2, max_size=8),
        st.lists(st.floats(-10, 10), min_size=2, max_size=8),
    )
    def test_antisymmetry(self, a, b):
        fwd = ttest_two_sample(a, b)
        rev = ttest_two_sample(b, a)
        assert fwd.t_stat == -rev.t_stat or (fwd.t_stat == 0 and rev.t_stat == 0)
        assert fwd.p_value == rev.p_value

    def test_scale_invariance(self, rng):
        for _ in range(30):
            a = rng.normal(0.5, 0.2, size=4).tolist()
            b = rng.normal(0.4, 0.2, size=4).tolist()
            c = float(rng.uniform(1e-3, 1e3))
            base = ttest_two_sample(a, b)
            scaled = ttest_two_sample([c * x for x in a], [c * x for x in b])
            assert math.isclose(base.t_stat, scaled.t_stat, rel_tol=1e-12, abs_tol=1e-12)
            assert math.isclose(base.p_value, scaled.p_value, rel_tol=1e-12, abs_tol=1e-12)

    def test_zero_variance_equal_means(self):
        result = ttest_two_sample([0.5, 0.5], [0.5, 0.5])
        assert result == (0.0, 1.0, 2.0)

    def test_zero_variance_unequal_means(self):
        result = ttest_two_sample([0.5, 0.5], [0.4, 0.4])
        assert math.isinf(result.t_stat) and result.t_stat > 0
        assert result.p_value == 0.0

    def test_too_small_samples_rejected(self):
        with pytest.raises(ValidationError):
            ttest_two_sample([1.0], [1.0, 2.0])
