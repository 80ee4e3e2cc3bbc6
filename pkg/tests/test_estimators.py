import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from oracles import slwe_weights, variance_factor_direct
from slwejump.estimators import (
    MeanState,
    SlweState,
    VarianceSchedule,
    VectorMeanState,
    VectorSlweState,
    diff_variance,
    effective_count,
    limiting_variance,
    variance_factor,
    weak_update,
)
from slwejump.envs import make_rng
from slwejump.harness import simulate_differences

lams = st.floats(min_value=0.01, max_value=0.999)
bits = st.lists(st.integers(0, 1), min_size=1, max_size=300)


class TestSlweUpdate:
    def test_single_step(self):
        s = SlweState(0.9, estimate=0.5)
        assert s.update(1) == pytest.approx(0.55)

    def test_first_observation_sets_estimate(self):
        s = SlweState(0.9)
        assert not s.initialized
        assert s.update(0) == 0.0
        assert s.initialized

    def test_fixed_point(self):
        s = SlweState(0.7, estimate=1.0)
        assert s.update(1) == 1.0

    @given(lams, bits)
    def test_stays_in_unit_interval(self, lam, xs):
        s = SlweState(lam)
        for x in xs:
            assert 0.0 <= s.update(x) <= 1.0

    @given(lams, bits)
    def test_matches_weighted_sum(self, lam, xs):
        s = SlweState(lam)
        for x in xs:
            s.update(x)
        w = slwe_weights(len(xs), lam)
        assert_allclose(s.estimate, float(w @ np.array(xs, dtype=float)), atol=1e-12)

    def test_rejects_bad_lambda(self):
        for lam in (0.0, 1.0, -0.5, 1.2):
            with pytest.raises(ValueError):
                SlweState(lam)


class TestVectorSlwe:
    def test_hand_evaluated_step(self):
        s = VectorSlweState(0.95, 4, estimate=[0.25] * 4)
        est = s.update(1)
        assert_allclose(est, [0.2375, 0.2875, 0.2375, 0.2375], rtol=0, atol=1e-15)
        assert math.fsum(est) == pytest.approx(1.0, abs=1e-12)

    def test_first_observation_is_one_hot(self):
        s = VectorSlweState(0.9, 3)
        assert s.update(2) == [0.0, 0.0, 1.0]

    @given(lams, st.integers(2, 6).flatmap(
        lambda r: st.tuples(st.just(r), st.lists(st.integers(0, r - 1), min_size=1, max_size=400))))
    def test_sum_and_binarized_consistency(self, lam, data):
        r, ks = data
        vec = VectorSlweState(lam, r)
        scalars = [SlweState(lam) for _ in range(r)]
        for k in ks:
            est = vec.update(k)
            assert abs(math.fsum(est) - 1.0) < 1e-12
            for i, s in enumerate(scalars):
                s.update(1 if k == i else 0)
        # identical arithmetic, so the components agree bit for bit
        assert est == [s.estimate for s in scalars]

    def test_rejects_bad_category(self):
        with pytest.raises(ValueError):
            VectorSlweState(0.9, 3).update(3)
        with pytest.raises(ValueError):
            VectorSlweState(0.9, 1)


class TestMeanUpdate:
    def test_examples(self):
        m = MeanState()
        assert m.update(1) == 1.0 and m.count == 1
        assert m.update(0) == 0.5 and m.count == 2

    @given(bits)
    def test_matches_arithmetic_mean(self, xs):
        m = MeanState()
        for x in xs:
            m.update(x)
        assert m.count == len(xs)
        assert abs(m.estimate - math.fsum(xs) / len(xs)) <= 1e-12

    def test_long_stream_matches_sum(self):
        xs = make_rng(5).integers(0, 2, size=100_000)
        m = MeanState()
        for x in xs.tolist():
            m.update(x)
        assert abs(m.estimate - xs.sum() / len(xs)) <= 1e-12

    @given(st.integers(2, 5).flatmap(
        lambda r: st.tuples(st.just(r), st.lists(st.integers(0, r - 1), min_size=1, max_size=300))))
    def test_vector_mean_is_frequency(self, data):
        r, ks = data
        m = VectorMeanState(r)
        for k in ks:
            est = m.update(k)
        assert_allclose(est, np.bincount(ks, minlength=r) / len(ks), atol=1e-12)
        assert abs(math.fsum(est) - 1.0) < 1e-12


def test_general_recursion_with_harmonic_weights_is_the_mean():
    xs = make_rng(11).integers(0, 2, size=100_000).tolist()
    est = float(xs[0])
    for n, x in enumerate(xs[1:], start=2):
        est = weak_update(est, x, (n - 1) / n)
    assert abs(est - math.fsum(xs) / len(xs)) <= 1e-12


class TestEffectiveCount:
    @pytest.mark.parametrize("lam,expected", [(0.95, 20), (0.96, 25), (0.5, 2), (0.9, 10),
                                              (0.98, 50), (0.01, 1)])
    def test_values(self, lam, expected):
        assert effective_count(lam) == expected

    def test_half_rounds_up(self):
        # 1 / (1 - 0.6) = 2.5 in exact arithmetic; the float lands just above
        assert effective_count(0.6) == 3
        assert effective_count(1 - 1 / 3.5) == 4


class TestVarianceFactor:
    def test_first_step_is_zero(self):
        for lam in (0.1, 0.5, 0.95):
            assert variance_factor(1, lam) == 0.0
            assert diff_variance(1, lam, 0.3) == 0.0

    def test_n2_example(self):
        assert diff_variance(2, 0.9, 0.5) == pytest.approx(0.08, rel=1e-12)

    @pytest.mark.parametrize("lam", [0.5, 0.9, 0.95, 0.99])
    def test_closed_form_against_direct_sum(self, lam):
        worst = 0.0
        for n in range(1, 10_001):
            direct = variance_factor_direct(n, lam)
            closed = variance_factor(n, lam)
            if direct < 1e-15:
                assert closed < 1e-15
                continue
            worst = max(worst, abs(closed - direct) / direct)
        assert worst < 1e-10

    @pytest.mark.parametrize("lam", [0.5, 0.9, 0.95, 0.99])
    def test_nonnegative(self, lam):
        assert all(variance_factor(n, lam) >= 0.0 for n in range(1, 2000))

    @pytest.mark.parametrize("lam", [0.5, 0.9, 0.95, 0.99])
    @pytest.mark.parametrize("p", [0.1, 0.5])
    def test_convergence_to_limit(self, lam, p):
        limit = limiting_variance(lam, p)
        for n in (10**3, 10**4, 10**5):
            gap = limit - diff_variance(n, lam, p)
            # the 1/n term governs the approach once lam**(2n) has died out
            assert 0.0 <= gap <= p * (1 - p) * (1.0 / n + lam ** (2 * (n - 1))) + 1e-15

    def test_limit_value(self):
        assert diff_variance(10**5, 0.95, 0.5) == pytest.approx(0.25 * 0.05 / 1.95, abs=3e-6)
        assert limiting_variance(0.95, 0.5) == pytest.approx(0.00641025641, rel=1e-9)

    @pytest.mark.parametrize("lam", [0.9, 0.95, 0.99])
    def test_eventually_increases_to_limit(self, lam):
        n0 = 5 * effective_count(lam)
        s = np.array([variance_factor(n, lam) for n in range(n0, 20 * n0)])
        assert np.all(np.diff(s) >= 0.0)
        assert s[-1] <= (1 - lam) / (1 + lam)

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            variance_factor(0, 0.9)
        with pytest.raises(ValueError):
            variance_factor(5, 1.0)
        with pytest.raises(ValueError):
            diff_variance(5, 0.9, 1.5)


class TestVarianceSchedule:
    def test_clamp(self):
        vs = VarianceSchedule(0.95)
        assert vs.plug_in(0.0) == 1e-6
        assert vs.plug_in(1.0) == 1e-6
        assert vs.plug_in(0.5) == 0.25
        assert vs(1, 0.5) == 0.0
        assert vs(30, 0.0) == pytest.approx(1e-6 * variance_factor(30, 0.95))

    def test_validation(self):
        with pytest.raises(ValueError):
            VarianceSchedule(0.95, clamp_floor=0.0)


@pytest.mark.parametrize("p", [0.1, 0.3, 0.5])
def test_weak_estimator_is_unbiased(p):
    slwe, _ = simulate_differences(40, p, 0.9, 50_000, seed=3)
    se = slwe.std(ddof=1) / math.sqrt(len(slwe))
    assert abs(slwe.mean() - p) < 3 * se


@settings(max_examples=30)
@given(st.integers(2, 300), lams)
def test_weight_representation_variance(n, lam):
    # Var of sum (w_i - 1/n) x_i over iid Bernoulli is p(1-p) sum (w_i - 1/n)^2
    w = slwe_weights(n, lam) - 1.0 / n
    assert variance_factor(n, lam) == pytest.approx(float(np.sum(w * w)), rel=1e-9, abs=1e-13)
