from fractions import Fraction
from math import comb

import numpy as np
import pytest
import scipy.stats
from hypothesis import given, settings
from hypothesis import strategies as st

from compnull.core import BernoulliEstimate, BudgetExhausted, concentration_radius, concentration_slack
from compnull.source import RiggedSource, SyntheticSource
from compnull.statistic import (
    WITHOUT_REPLACEMENT,
    ResponseBatch,
    generic_statistic,
    ideal_statistic,
    realistic_statistic,
    two_sample_exact_test,
)


def exact_test_oracle(s1, n1, s2, n2):
    """Rational-arithmetic enumeration of every table with the observed margins."""
    k = s1 + s2
    probs = {
        x: Fraction(comb(n1, x) * comb(n2, k - x), comb(n1 + n2, k))
        for x in range(max(0, k - n2), min(k, n1) + 1)
    }
    observed = probs[s1]
    return float(sum(p for p in probs.values() if p <= observed))


unit = st.floats(0.0, 1.0, allow_nan=False)


class TestIdealStatistic:
    @pytest.mark.parametrize(
        "p_prime,nulls,expected",
        [(0.5, [0.5, 0.9], 0.0), (0.5, [0.4, 0.6], 0.1), (0.95, [0.40, 0.55, 0.60], 0.35)],
    )
    def test_examples(self, p_prime, nulls, expected):
        assert ideal_statistic(p_prime, nulls) == pytest.approx(expected, abs=1e-12)

    def test_empty(self):
        with pytest.raises(ValueError):
            ideal_statistic(0.5, [])

    @given(unit, st.lists(unit, min_size=1, max_size=20))
    def test_matches_brute_force(self, p, nulls):
        assert ideal_statistic(p, nulls) == min(abs(p - q) for q in nulls)


class TestRealisticStatistic:
    def test_motivating_example(self):
        # Estimates 0.870 and 0.948 from the two-query example.
        est = [BernoulliEstimate(870, 1000)]
        assert realistic_statistic(est, BernoulliEstimate(948, 1000)) == pytest.approx(0.078, abs=1e-12)

    def test_examples(self):
        assert realistic_statistic([BernoulliEstimate(0, 10), BernoulliEstimate(10, 10)], BernoulliEstimate(0, 10)) == 0.0
        est = [BernoulliEstimate(1, 10), BernoulliEstimate(5, 10), BernoulliEstimate(13, 20)]
        assert realistic_statistic(est, BernoulliEstimate(7, 10)) == pytest.approx(0.05, abs=1e-12)

    def test_empty(self):
        with pytest.raises(ValueError):
            realistic_statistic([], BernoulliEstimate(1, 2))

    @given(unit, st.lists(unit, min_size=1, max_size=10))
    def test_agrees_with_ideal_on_exact_estimates(self, p, nulls):
        assert realistic_statistic(nulls, p) == ideal_statistic(p, nulls)

    @settings(max_examples=300)
    @given(
        st.lists(st.tuples(unit, unit), min_size=1, max_size=15),
        st.tuples(unit, unit),
    )
    def test_one_lipschitz_under_sup_norm(self, pairs, prime):
        truth = [t for t, _ in pairs]
        est = [e for _, e in pairs]
        lhs = abs(realistic_statistic(est, prime[1]) - ideal_statistic(prime[0], truth))
        rhs = max(abs(t - e) for t, e in pairs) + abs(prime[0] - prime[1])
        assert lhs <= rhs + 1e-12


class TestEmpiricalConcentration:
    @pytest.mark.parametrize("m", [3, 10, 20])
    @pytest.mark.parametrize("r", [1000, 10_000])
    def test_statistic_tracks_ideal(self, m, r):
        rng = np.random.default_rng(1000 * m + r)
        p = rng.uniform(0.2, 0.8, size=m)
        p_prime = 0.5
        trials = 2000
        null_hat = rng.binomial(r, p, size=(trials, m)) / r
        prime_hat = rng.binomial(r, p_prime, size=trials) / r
        t_real = np.abs(null_hat - prime_hat[:, None]).min(axis=1)
        t_ideal = ideal_statistic(p_prime, p)
        freq = np.mean(np.abs(t_real - t_ideal) < concentration_radius(r))
        assert freq >= 1 - concentration_slack(m, r)


class TestGenericStatistic:
    def test_all_ones_source(self):
        src = RiggedSource(10_000, {f"q{i}": 1.0 for i in range(5)} | {"qp": 1.0})
        res = generic_statistic(src, [f"q{i}" for i in range(5)], "qp", m=4, r=10, rng_seed=3)
        assert res.statistic == 0.0
        assert src.budget_ledger_report().spent == 50

    def test_rigged_counts_reduce_to_realistic_statistic(self):
        src = RiggedSource(10_000, {"lo": 0.4, "hi": 0.6, "qp": 0.5})
        res = generic_statistic(src, ["lo", "hi"], "qp", m=2, r=100, rng_seed=0, sampling_mode=WITHOUT_REPLACEMENT)
        assert res.statistic == pytest.approx(0.1, abs=1e-12)
        assert sorted(e.successes for e in res.estimates) == [40, 60]
        assert res.prime.successes == 50

    def test_seeded_determinism(self):
        def run():
            src = SyntheticSource(10**7, seed=11, uniform=(0.3, 0.7))
            return generic_statistic(src, [f"n{i}" for i in range(30)], "qp", m=3, r=1000, rng_seed=99)

        a, b = run(), run()
        assert a.statistic == b.statistic
        assert a.estimates == b.estimates and a.prime == b.prime

    def test_exact_budget_and_failure_leaves_ledger(self):
        src = SyntheticSource(3 * 50, seed=0, uniform=(0.2, 0.4))
        with pytest.raises(BudgetExhausted):
            generic_statistic(src, ["a", "b"], "qp", m=3, r=50, rng_seed=0)
        assert src.budget_ledger_report().spent == 0
        generic_statistic(src, ["a", "b"], "qp", m=2, r=50, rng_seed=0)
        assert src.remaining_budget() == 0

    def test_empty_queries(self):
        src = SyntheticSource(100, uniform=(0.2, 0.4))
        with pytest.raises(ValueError):
            generic_statistic(src, [], "qp", m=1, r=10, rng_seed=0)

    def test_records_sampling_mode(self):
        src = SyntheticSource(1000, uniform=(0.2, 0.4))
        res = generic_statistic(src, ["a", "b", "c"], "qp", m=3, r=10, rng_seed=0, sampling_mode=WITHOUT_REPLACEMENT)
        assert res.sampling_mode == WITHOUT_REPLACEMENT
        assert sorted(e.query_id for e in res.estimates) == ["a", "b", "c"]


class TestResponseBatch:
    def test_estimate(self):
        assert ResponseBatch("q", 3, 4).estimate().p_hat == 0.75

    def test_invalid(self):
        with pytest.raises(ValueError):
            ResponseBatch("q", 5, 4)


class TestTwoSampleExactTest:
    def test_identical_tables(self):
        assert two_sample_exact_test(3, 10, 3, 10) == pytest.approx(1.0, abs=1e-12)

    def test_small_table_against_enumeration(self):
        # 25/252 observed; tables at x = 0, 1, 4, 5 are no more likely.
        assert exact_test_oracle(1, 5, 4, 5) == pytest.approx(52 / 252, abs=1e-15)
        assert two_sample_exact_test(1, 5, 4, 5) == pytest.approx(52 / 252, abs=1e-12)

    @settings(max_examples=200, deadline=None)
    @given(st.data())
    def test_matches_rational_enumeration(self, data):
        n1 = data.draw(st.integers(1, 40))
        n2 = data.draw(st.integers(1, 40))
        s1 = data.draw(st.integers(0, n1))
        s2 = data.draw(st.integers(0, n2))
        assert two_sample_exact_test(s1, n1, s2, n2) == pytest.approx(exact_test_oracle(s1, n1, s2, n2), abs=1e-9)

    @settings(max_examples=100, deadline=None)
    @given(st.data())
    def test_symmetric(self, data):
        n1 = data.draw(st.integers(1, 500))
        n2 = data.draw(st.integers(1, 500))
        s1 = data.draw(st.integers(0, n1))
        s2 = data.draw(st.integers(0, n2))
        assert two_sample_exact_test(s1, n1, s2, n2) == pytest.approx(two_sample_exact_test(s2, n2, s1, n1), rel=1e-9)
        assert two_sample_exact_test(s1, n1, s1, n1) == pytest.approx(1.0, abs=1e-9)

    @pytest.mark.parametrize("table", [(30, 100, 45, 90), (2, 7, 9, 12), (500, 1000, 540, 1000)])
    def test_agrees_with_scipy(self, table):
        s1, n1, s2, n2 = table
        expected = scipy.stats.fisher_exact([[s1, n1 - s1], [s2, n2 - s2]]).pvalue
        assert two_sample_exact_test(*table) == pytest.approx(expected, rel=1e-6)

    def test_motivating_example_large_r(self):
        r = 168_700
        assert two_sample_exact_test(round(0.870 * r), r, round(0.948 * r), r) < 1e-6

    @pytest.mark.parametrize("args", [(0, 0, 1, 2), (3, 2, 1, 2), (-1, 2, 1, 2)])
    def test_invalid(self, args):
        with pytest.raises(ValueError):
            two_sample_exact_test(*args)
