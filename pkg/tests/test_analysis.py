import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from redshard.analysis import (
    SETTINGS,
    GapBoundQuery,
    Verdict,
    bound_table,
    gap_bound,
    harmonic_log_estimate,
    verdict,
)
from redshard.distributions import Exponential, ExponentialMixture, ShiftedExponential, expected_extreme, harmonic
from redshard.exceptions import InvalidSpec, UnsupportedSetting

EXP50 = Exponential(50.0)
NLU50 = ShiftedExponential.with_mean(50.0, 0.4)
NSU50 = ExponentialMixture.scaled(50.0, [(0.5, 0.4), (0.5, 1.6)])


def g(setting, L, d_min, dist=EXP50):
    return gap_bound(GapBoundQuery(setting, L, d_min, dist))


class TestGapBound:
    def test_table_values(self):
        assert g("exp_preemptive_general", 5, 3) == pytest.approx((1 / 3 + 1 / 4) / 50, abs=1e-15)
        assert g("exp_preemptive_general", 5, 3) == pytest.approx(0.011667, abs=5e-7)
        assert g("exp_nonpreemptive_dmin_ge_L", 3, 3) == pytest.approx(0.02)
        assert g("exp_nonpreemptive_general", 5, 3) == pytest.approx(0.011667 + 0.02, abs=5e-7)
        assert g("nlu_nonpreemptive", 3, 3, NLU50) == pytest.approx(0.0560, abs=1e-12)
        assert g("nlu_preemptive", 3, 3, NLU50) == pytest.approx(0.0560, abs=1e-12)
        assert g("exp_preemptive_dmin_ge_L", 3, 3) == 0.0
        assert g("nsu_repetition_nonpreemptive", 3, 3, NSU50) == 0.0

    def test_unsupported(self):
        with pytest.raises(UnsupportedSetting):
            GapBoundQuery("mystery", 3, 3, EXP50)
        with pytest.raises(UnsupportedSetting):
            g("exp_preemptive_general", 3, 3, NLU50)
        with pytest.raises(UnsupportedSetting):
            g("exp_nonpreemptive_dmin_ge_L", 5, 3)
        with pytest.raises(UnsupportedSetting):
            g("nlu_preemptive", 3, 3, NSU50)
        with pytest.raises(UnsupportedSetting):
            g("nsu_repetition_nonpreemptive", 3, 3, NLU50)
        with pytest.raises(InvalidSpec):
            GapBoundQuery("exp_preemptive_general", 0, 1, EXP50)

    def test_exponential_counts_as_both(self):
        # memoryless laws satisfy both aging inequalities
        assert g("nlu_nonpreemptive", 3, 3, Exponential(1.0)) == pytest.approx(harmonic(3) + harmonic(2))
        assert g("nsu_repetition_nonpreemptive", 3, 3, Exponential(1.0)) == 0.0

    @given(st.integers(1, 12), st.integers(1, 12), st.floats(0.1, 100))
    def test_empty_sum_when_redundant(self, L, d, mu):
        if d >= L:
            assert g("exp_preemptive_general", L, d, Exponential(mu)) == 0.0

    @given(st.integers(1, 12), st.integers(1, 11), st.floats(0.1, 100))
    def test_monotone(self, L, d, mu):
        e = Exponential(mu)
        for s in ("exp_preemptive_general", "exp_nonpreemptive_general"):
            assert g(s, L, d + 1, e) <= g(s, L, d, e)
            assert g(s, L + 1, d, e) >= g(s, L, d, e)

    @given(st.floats(0.1, 100), st.floats(0.0, 0.95), st.integers(2, 10))
    def test_nlu_identity_shifted(self, mu, frac, L):
        d = ShiftedExponential.with_mean(mu, frac)
        expect = 2 * d.shift + (d.mean - d.shift) * (harmonic(L) + harmonic(L - 1))
        assert g("nlu_nonpreemptive", L, 1, d) == pytest.approx(expect, rel=1e-12)

    def test_log_estimate_dominates_sum(self):
        for L in range(2, 20):
            for d in range(1, L):
                assert harmonic_log_estimate(L, d, 1.0) >= g("exp_preemptive_general", L, d, Exponential(1.0)) - 1e-12
        assert harmonic_log_estimate(3, 3, 1.0) == 0.0

    def test_bound_table(self):
        rows = bound_table(5, 3, EXP50)
        assert [r[0] for r in rows] == list(SETTINGS)
        vals = {s: v for s, v, _ in rows}
        assert vals["exp_preemptive_dmin_ge_L"] is None
        assert vals["exp_preemptive_general"] == pytest.approx(0.0116667, abs=1e-7)


class TestVerdict:
    def test_examples(self):
        assert verdict(0.0114, 0.0005, 0.02) == Verdict.WITHIN
        assert verdict(0.05, 0.001, 0.02) == Verdict.VIOLATED
        assert verdict(0.021, 0.002, 0.02) == Verdict.INCONCLUSIVE

    def test_negative_se(self):
        with pytest.raises(InvalidSpec):
            verdict(0.0, -1.0, 0.0)

    @given(st.floats(-1, 1), st.floats(0, 1), st.floats(-1, 1))
    def test_partition(self, m, se, b):
        v = verdict(m, se, b)
        assert (v == Verdict.VIOLATED) == (m - 3 * se > b)
        if v == Verdict.WITHIN:
            assert m <= b
        if v == Verdict.INCONCLUSIVE:
            assert m > b >= m - 3 * se


def test_sandwich_all_L():
    for L in range(2, 9):
        for d in (Exponential(3.0), ShiftedExponential.with_mean(3.0, 0.4)):
            v = expected_extreme(d, L, "max")
            assert 1 / 3.0 <= v <= harmonic(L) / 3.0
            assert math.isfinite(v)
