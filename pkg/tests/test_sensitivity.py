import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dpmean.exceptions import PreconditionError, SizeCapError
from dpmean.sensitivity import (
    ParticipationPattern,
    is_monotone_nonneg,
    sens_min_sep,
    sens_single,
    sens_upper_bound,
    strided_column_sum,
)
from dpmean.series import banded_inverse, dtoep_series, identity_series, sqrt_prefix_series

# Sum of columns 1, 3, 5 of LTT(dtoep_series(6)), evaluated by hand.
DTOEP6_B2 = math.sqrt(
    1 + (1 / 2) ** 2 + (1 + 1 / 3) ** 2 + (1 / 2 + 1 / 4) ** 2
    + (1 + 1 / 3 + 1 / 5) ** 2 + (1 / 2 + 1 / 4 + 1 / 6) ** 2
)
# Frozen from the brute-force enumeration; agrees with the value above.
DTOEP6_B2_FROZEN = 2.6041633333312


def decreasing_series(rng, n):
    c = np.sort(rng.random(n))[::-1]
    return c / c[0]


def brute_force(C, b, k):
    """All admissible index sets, no pruning, via bitmasks."""
    n = C.shape[1]
    G = np.abs(C.T @ C)
    best = 0.0
    for mask in range(1 << n):
        idx = [i for i in range(n) if mask >> i & 1]
        if len(idx) > k or any(j - i < b for i, j in zip(idx, idx[1:])):
            continue
        best = max(best, G[np.ix_(idx, idx)].sum())
    return math.sqrt(best)


class TestPattern:
    def test_k(self):
        assert ParticipationPattern(10, 3).k == 4
        assert ParticipationPattern(10, 10).k == 1
        assert ParticipationPattern.from_k(8196, 64).b == 129

    def test_invalid(self):
        with pytest.raises(PreconditionError):
            ParticipationPattern(5, 6)
        with pytest.raises(PreconditionError):
            ParticipationPattern(5, 0)


class TestSingle:
    def test_examples(self):
        assert sens_single(identity_series(17)) == 1.0
        assert sens_single([3, 4]) == 5.0
        assert abs(sens_single(dtoep_series(10**6)) - math.pi / math.sqrt(6)) < 1e-6


class TestMinSep:
    def test_identity_sqrt_k(self):
        for n, b in [(10, 1), (10, 3), (64, 7), (100, 100)]:
            pat = ParticipationPattern(n, b)
            assert abs(sens_min_sep(identity_series(n), pat) - math.sqrt(pat.k)) < 1e-12

    def test_k1_is_single(self):
        c = dtoep_series(30)
        assert abs(sens_min_sep(c, ParticipationPattern(30, 30)) - sens_single(c)) < 1e-15

    def test_dtoep6(self):
        pat = ParticipationPattern(6, 2)
        got = sens_min_sep(dtoep_series(6), pat)
        assert abs(got - DTOEP6_B2) < 1e-12
        assert abs(got - DTOEP6_B2_FROZEN) < 1e-12
        assert abs(sens_upper_bound(dtoep_series(6).dense(), pat) - got) < 1e-12

    def test_strided_sum(self):
        np.testing.assert_allclose(strided_column_sum([1, 2, 3, 4, 5], 2), [1, 2, 4, 6, 9])

    def test_rejects_non_monotone(self):
        with pytest.raises(PreconditionError, match="sens_upper_bound"):
            sens_min_sep([1.0, 0.5, 0.7], ParticipationPattern(3, 1))
        with pytest.raises(PreconditionError):
            sens_min_sep([1.0, -0.1, -0.2], ParticipationPattern(3, 1))

    def test_tolerance(self):
        assert is_monotone_nonneg([1.0, 0.5, 0.5 + 1e-13])
        assert not is_monotone_nonneg([1.0, 0.5, 0.5 + 1e-9])

    def test_monotone_in_k(self):
        c = dtoep_series(200)
        vals = [sens_min_sep(c, ParticipationPattern(200, b)) for b in range(200, 0, -1)]
        assert np.all(np.diff(vals) >= -1e-12)

    @given(st.floats(0.01, 100))
    def test_scaling(self, alpha):
        c = dtoep_series(40)
        pat = ParticipationPattern(40, 6)
        assert math.isclose(sens_min_sep(c.scaled(alpha), pat), alpha * sens_min_sep(c, pat), rel_tol=1e-12)

    @pytest.mark.parametrize("n", [16, 100, 1000])
    def test_banded_inverse_admissible(self, n):
        for p in {1, 2, 5, n // 4, n}:
            assert is_monotone_nonneg(banded_inverse(dtoep_series(n), p))
            assert is_monotone_nonneg(banded_inverse(sqrt_prefix_series(n), p))


class TestEnumeration:
    def test_identity_b1(self):
        for n in (1, 5, 10):
            assert abs(sens_upper_bound(np.eye(n), ParticipationPattern(n, 1)) - math.sqrt(n)) < 1e-12

    def test_k1_max_column(self):
        rng = np.random.default_rng(3)
        C = rng.normal(size=(9, 9))
        got = sens_upper_bound(C, ParticipationPattern(9, 9))
        assert abs(got - np.linalg.norm(C, axis=0).max()) < 1e-12

    def test_cap(self):
        with pytest.raises(SizeCapError):
            sens_upper_bound(np.eye(25), ParticipationPattern(25, 5))

    def test_pruning_matches_full_enumeration(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            n = int(rng.integers(1, 11))
            b = int(rng.integers(1, n + 1))
            C = np.tril(rng.normal(size=(n, n)))
            pat = ParticipationPattern(n, b)
            full = sens_upper_bound(C, pat, prune=False)
            assert abs(sens_upper_bound(C, pat) - full) < 1e-12
            assert abs(brute_force(C, b, pat.k) - full) < 1e-12

    def test_oracle_agreement(self):
        worst = 0.0
        for seed in range(50):
            rng = np.random.default_rng(seed)
            for n in range(1, 13):
                c = decreasing_series(rng, n)
                C = np.tril(np.array([[c[i - j] if i >= j else 0 for j in range(n)] for i in range(n)]))
                for b in range(1, min(4, n) + 1):
                    pat = ParticipationPattern(n, b)
                    worst = max(worst, abs(sens_min_sep(c, pat) - sens_upper_bound(C, pat)))
        assert worst <= 1e-12
