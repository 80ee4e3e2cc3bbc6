import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from slwejump.detect import (
    TestConfig,
    TestOutcome,
    chi2_cdf,
    chi2_quantile,
    chi2_sf,
    chi2_test,
    chi2_threshold,
    normal_cdf,
    normal_quantile,
    normal_sf,
    z_test,
    z_threshold,
)

probs = st.floats(min_value=1e-12, max_value=1 - 1e-12)


class TestNormalQuantile:
    def test_median(self):
        assert normal_quantile(0.5) == 0.0

    def test_known_values(self):
        assert normal_quantile(0.975) == pytest.approx(1.959964, abs=1e-6)
        assert normal_quantile(1 - 1e-3 / 2) == pytest.approx(3.2905, abs=1e-4)

    def test_threshold_three_alpha(self):
        # two-sided level matching a threshold of 3
        alpha = 2 * normal_sf(3.0)
        assert alpha == pytest.approx(0.0027, abs=1e-4)
        assert z_threshold(alpha) == pytest.approx(3.0, abs=1e-10)

    @given(probs)
    def test_against_scipy(self, q):
        assert abs(normal_quantile(q) - stats.norm.ppf(q)) < 1e-8

    def test_grid_against_scipy(self):
        qs = np.concatenate([np.logspace(-15, -1, 200), np.linspace(0.01, 0.99, 500),
                             1 - np.logspace(-15, -1, 200)])
        mine = np.array([normal_quantile(q) for q in qs])
        assert np.max(np.abs(mine - stats.norm.ppf(qs))) < 1e-8

    @given(st.floats(min_value=-30, max_value=0))
    def test_inverts_lower_tail_cdf(self, x):
        # 1 - cdf(x) loses digits in the upper tail, so round trips use the lower one
        q = normal_cdf(x)
        if q > 0.0:
            assert normal_quantile(q) == pytest.approx(x, rel=1e-10, abs=1e-10)

    @given(st.floats(min_value=1e-6, max_value=0.5))
    def test_symmetry(self, q):
        assert normal_quantile(1.0 - q) == pytest.approx(-normal_quantile(q), abs=1e-8)

    @pytest.mark.parametrize("q", [0.0, 1.0, -0.1, 1.5, float("nan")])
    def test_rejects_out_of_range(self, q):
        with pytest.raises(ValueError):
            normal_quantile(q)


class TestChi2:
    def test_known_values(self):
        assert chi2_quantile(2, 0.95) == pytest.approx(5.99146, abs=1e-5)
        assert chi2_quantile(3, 1 - 1e-5) == pytest.approx(25.9017, abs=1e-4)
        assert chi2_threshold(4, 0.01) == pytest.approx(11.3449, abs=1e-4)

    @pytest.mark.parametrize("df", [1, 2, 3, 4, 7, 10, 30, 100])
    def test_quantile_against_scipy(self, df):
        qs = [1e-10, 1e-4, 0.01, 0.1, 0.5, 0.9, 0.99, 1 - 1e-5, 1 - 1e-9]
        for q in qs:
            ref = stats.chi2.ppf(q, df)
            assert chi2_quantile(df, q) == pytest.approx(ref, rel=1e-9)

    @given(st.integers(1, 60), probs)
    def test_quantile_inverts(self, df, q):
        x = chi2_quantile(df, q)
        assert x == pytest.approx(stats.chi2.ppf(q, df), rel=1e-8, abs=1e-12)

    @pytest.mark.parametrize("df", [1, 3, 9, 40])
    def test_cdf_sf_against_scipy(self, df):
        xs = np.linspace(0.01, 4 * df + 20, 300)
        for x in xs:
            assert chi2_cdf(x, df) == pytest.approx(stats.chi2.cdf(x, df), rel=1e-10, abs=1e-15)
            assert chi2_sf(x, df) == pytest.approx(stats.chi2.sf(x, df), rel=1e-9, abs=1e-300)

    def test_cdf_edges(self):
        assert chi2_cdf(0.0, 3) == 0.0 and chi2_sf(-1.0, 3) == 1.0

    @pytest.mark.parametrize("df", [0, -1, 1.5])
    def test_rejects_bad_df(self, df):
        with pytest.raises(ValueError):
            chi2_quantile(df, 0.5)


class TestZTest:
    def test_strict_inequality(self):
        # the statistic sits exactly on the threshold: no rejection
        out = z_test(0.6, 0.5, 0.01, threshold=1.0)
        assert out.statistic == pytest.approx(1.0)
        assert out.rejected is (out.statistic > 1.0)
        assert not TestOutcome.decide(2.0, 2.0).rejected
        assert TestOutcome.decide(2.0 + 1e-12, 2.0).rejected

    def test_two_sided(self):
        a = z_test(0.3, 0.5, 0.0025, 3.0)
        b = z_test(0.7, 0.5, 0.0025, 3.0)
        assert a.statistic == pytest.approx(4.0) and b.statistic == pytest.approx(4.0)
        assert a.rejected and b.rejected

    def test_rejects_zero_variance(self):
        with pytest.raises(ValueError):
            z_test(0.5, 0.5, 0.0, 3.0)


class TestChi2Test:
    def test_statistic_sums_all_components(self):
        out = chi2_test([0.5, 0.3, 0.2], [0.4, 0.4, 0.2], [0.01, 0.04, 0.02], threshold=1.0)
        assert out.statistic == pytest.approx(0.01 / 0.01 + 0.01 / 0.04 + 0.0)
        assert out.rejected

    def test_validation(self):
        with pytest.raises(ValueError):
            chi2_test([0.5, 0.5], [0.5, 0.5, 0.0], [1, 1], 1.0)
        with pytest.raises(ValueError):
            chi2_test([0.5, 0.5], [0.5, 0.5], [1, 0], 1.0)
        with pytest.raises(ValueError):
            chi2_test([1.0], [1.0], [1.0], 1.0)


class TestConfigTests:
    def test_exactly_one(self):
        with pytest.raises(ValueError):
            TestConfig()
        with pytest.raises(ValueError):
            TestConfig(alpha=0.01, threshold=3.0)

    def test_fields_validated(self):
        for kwargs in ({"cadence": 0}, {"warmup": 1}):
            with pytest.raises(ValueError):
                TestConfig(threshold=3.0, **kwargs)
        with pytest.raises(ValueError):
            TestConfig(alpha=1.5)
        with pytest.raises(ValueError):
            TestConfig(threshold=-1.0)

    def test_thresholds_from_alpha(self):
        cfg = TestConfig(alpha=0.05)
        assert cfg.binomial_threshold() == pytest.approx(1.959964, abs=1e-6)
        assert cfg.multinomial_threshold(3) == pytest.approx(5.99146, abs=1e-5)
        assert TestConfig(threshold=3.0).multinomial_threshold(4) == 3.0

    def test_round_trip(self):
        cfg = TestConfig(alpha=0.01, cadence=5, warmup=3)
        assert TestConfig.from_dict(cfg.to_dict()) == cfg


def test_z_threshold_matches_two_sided_level():
    for alpha in (0.1, 0.05, 0.01, 1e-3, 1e-6):
        z = z_threshold(alpha)
        assert 2 * normal_sf(z) == pytest.approx(alpha, rel=1e-9)
        assert math.isfinite(z)
