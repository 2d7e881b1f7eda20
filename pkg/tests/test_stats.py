import math

import numpy as np
import pytest
import scipy.special
import scipy.stats

from dualaug.stats import betainc_reg, paired_t_test, t_two_tailed_p


class TestBetainc:
    def test_against_scipy_grid(self):
        # scipy.special.betainc is the independent oracle; spec'd absolute
        # accuracy for the CF evaluation is 1e-8.
        for a in [0.5, 1.0, 2.0, 2.5, 9.5, 40.0]:
            for b in [0.5, 1.0, 3.0, 7.5]:
                for x in np.linspace(0.0, 1.0, 21):
                    got = betainc_reg(a, b, float(x))
                    want = scipy.special.betainc(a, b, x)
                    assert abs(got - want) <= 1e-8, (a, b, x)

    def test_endpoints(self):
        assert betainc_reg(2.0, 3.0, 0.0) == 0.0
        assert betainc_reg(2.0, 3.0, 1.0) == 1.0

    def test_domain_errors(self):
        with pytest.raises(ValueError):
            betainc_reg(0.0, 1.0, 0.5)
        with pytest.raises(ValueError):
            betainc_reg(1.0, 1.0, 1.5)


class TestTwoTailedP:
    def test_against_scipy_t(self):
        for df in [1, 2, 4, 10, 19, 50]:
            for t in [0.0, 0.5, 1.0, 2.0, 4.2426, 10.0]:
                got = t_two_tailed_p(t, df)
                want = 2.0 * scipy.stats.t.sf(abs(t), df)
                assert abs(got - want) <= 1e-10, (t, df)

    def test_tabulated_critical_values(self):
        # Classic two-tailed 5% critical values: p(t_crit, df) == 0.05.
        for df, t_crit in [(1, 12.706), (4, 2.776), (9, 2.262), (19, 2.093)]:
            assert abs(t_two_tailed_p(t_crit, df) - 0.05) < 5e-4

    def test_symmetry_in_t(self):
        assert t_two_tailed_p(2.5, 7) == t_two_tailed_p(-2.5, 7)


class TestPairedTTest:
    def test_identical_samples(self):
        r = paired_t_test([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
        assert r.t == 0.0 and r.p == 1.0 and not r.significant

    def test_zero_mean_differences(self):
        r = paired_t_test([1.0, -1.0], [0.0, 0.0])
        assert r.t == 0.0

    def test_spec_oracle_values(self):
        # d = [1,2,3,4,5]: t = 3 / (1.5811/sqrt(5)) = 4.2426, p ~ 0.0132.
        r = paired_t_test([1.0, 2.0, 3.0, 4.0, 5.0], [0.0] * 5)
        assert abs(r.t - 4.2426) < 1e-3
        assert abs(r.p - 0.0132) < 1e-3
        assert r.significant

    def test_matches_scipy_ttest_rel(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            a = rng.normal(size=12).tolist()
            b = rng.normal(size=12).tolist()
            got = paired_t_test(a, b)
            want = scipy.stats.ttest_rel(a, b)
            assert abs(got.t - want.statistic) < 1e-10
            assert abs(got.p - want.pvalue) < 1e-10

    def test_degenerate_zero_variance(self):
        r = paired_t_test([2.0, 2.0, 2.0], [1.0, 1.0, 1.0])
        assert r.degenerate and r.p == 0.0 and math.isinf(r.t)

    def test_joint_permutation_invariance(self):
        rng = np.random.default_rng(1)
        a = rng.normal(size=10).tolist()
        b = rng.normal(size=10).tolist()
        perm = rng.permutation(10)
        base = paired_t_test(a, b)
        shuffled = paired_t_test([a[i] for i in perm], [b[i] for i in perm])
        assert abs(base.t - shuffled.t) < 1e-12
        assert abs(base.p - shuffled.p) < 1e-12

    def test_negating_differences_flips_t(self):
        rng = np.random.default_rng(2)
        a = rng.normal(size=10).tolist()
        b = rng.normal(size=10).tolist()
        fwd = paired_t_test(a, b)
        rev = paired_t_test(b, a)
        assert abs(fwd.t + rev.t) < 1e-12
        assert abs(fwd.p - rev.p) < 1e-12

    def test_too_short_rejected(self):
        with pytest.raises(ValueError):
            paired_t_test([1.0], [2.0])
