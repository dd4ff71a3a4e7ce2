import math
import warnings

import numpy as np
import pytest

from dpmean.exceptions import PreconditionError
from dpmean.metrics import (
    PrivacyBudget,
    error_curve,
    error_E,
    frob_prefix,
    gaussian_scale,
    harmonic,
    identity_closed_form,
    lower_bound,
    optimize_nu,
    row_norm,
)
from dpmean.sensitivity import ParticipationPattern, sens_upper_bound
from dpmean.series import build_plan, plan_from_series, running_means_dense

PLANS_SMALL = [
    ("identity", "none", None, None),
    ("sqrt", "none", None, None),
    ("sqrt", "banded", 3, None),
    ("sqrt", "banded-inverse", 3, None),
    ("dtoep", "none", None, None),
    ("dtoep", "banded", 5, None),
    ("dtoep", "banded-inverse", 5, None),
    ("nu", "none", None, 0.2),
    ("nu", "banded-inverse", 5, 0.05),
]


class TestGaussianScale:
    def test_examples(self):
        d = 1.25 / math.e**2
        assert math.isclose(gaussian_scale(1, d), 2.0, rel_tol=1e-14)
        assert math.isclose(gaussian_scale(2, d), 1.0, rel_tol=1e-14)
        # frozen: sqrt(2 ln 1.25e6)
        assert abs(gaussian_scale(1, 1e-6) - 5.298802526850474) < 1e-12

    @pytest.mark.parametrize("eps,delta", [(0, 0.1), (-1, 0.1), (1, 0), (1, 1), (1, 2)])
    def test_domain(self, eps, delta):
        with pytest.raises(PreconditionError):
            gaussian_scale(eps, delta)

    def test_budget_warns_outside_unit(self):
        with warnings.catch_warnings(record=True) as w:
            warnings.simplefilter("always")
            b = PrivacyBudget(10, 5e-6, 1000)
        assert any("outside" in str(x.message) for x in w)
        assert not b.formal
        assert PrivacyBudget(0.5, 1e-6).formal


class TestFrob:
    def test_identity_harmonic(self):
        n = 500
        assert math.isclose(frob_prefix(build_plan("identity", "none", n), n), math.sqrt(harmonic(n)), rel_tol=1e-13)

    @pytest.mark.parametrize("kind,banding,p,nu", PLANS_SMALL)
    def test_t1(self, kind, banding, p, nu):
        assert frob_prefix(build_plan(kind, banding, 20, p=p, nu=nu), 1) == 1.0

    @pytest.mark.parametrize("kind,banding,p,nu", PLANS_SMALL)
    def test_dense_oracle(self, kind, banding, p, nu):
        n = 512
        plan = build_plan(kind, banding, n, p=p, nu=nu)
        B = plan.b_matrix()
        for t in (1, 17, 256, 512):
            assert abs(frob_prefix(plan, t) - np.linalg.norm(B[:t])) < 1e-10
            assert abs(row_norm(plan, t) - np.linalg.norm(B[t - 1])) < 1e-10

    def test_mean_aware_bounded(self):
        vals = [frob_prefix(build_plan("dtoep", "none", n), n) for n in (64, 512, 8196)]
        assert all(v < math.sqrt(5 / 2) for v in vals)

    def test_range(self):
        with pytest.raises(PreconditionError):
            frob_prefix(build_plan("dtoep", "none", 5), 6)


class TestErrorE:
    @pytest.mark.parametrize("n", [10, 1000, 10**6])
    def test_identity_closed_form(self, n):
        got = error_E(build_plan("identity", "none", n), ParticipationPattern(n, n)).E_t
        assert abs(got - identity_closed_form(n)) <= 1e-12

    def test_published_values(self):
        n = 8196
        assert round(error_E(build_plan("identity", "none", n), ParticipationPattern.from_k(n, 4)).E_t, 3) == 0.068
        assert round(error_E(build_plan("dtoep", "none", n), ParticipationPattern.from_k(n, 64)).E_t, 3) == 0.186

    def test_report_fields(self):
        plan = build_plan("dtoep", "banded-inverse", 200, p=20)
        pat = ParticipationPattern(200, 20)
        budget = PrivacyBudget(0.5, 1e-5, xi=3.0)
        r = error_E(plan, pat, budget, t=77)
        assert math.isclose(r.E_t, r.frob_prefix * r.sens / math.sqrt(77), rel_tol=1e-15)
        assert math.isclose(r.per_step_std, budget.sigma * 3.0 * r.sens * row_norm(plan, 77), rel_tol=1e-14)

    def test_budget_independence(self):
        plan = build_plan("sqrt", "none", 100)
        pat = ParticipationPattern(100, 10)
        r1 = error_E(plan, pat, PrivacyBudget(0.5, 1e-5, xi=1.0))
        r2 = error_E(plan, pat, PrivacyBudget(0.9, 1e-3, xi=1.0))
        r3 = error_E(plan, pat, PrivacyBudget(0.5, 1e-5, xi=2.5))
        assert r1.E_t == r2.E_t == r3.E_t
        assert math.isclose(r3.per_step_std, 2.5 * r1.per_step_std, rel_tol=1e-14)

    def test_non_monotone_uses_enumeration(self):
        c = np.array([1.0, -0.3, 0.2, 0.1, 0.0, 0.0])
        plan = plan_from_series(c)
        pat = ParticipationPattern(6, 2)
        assert math.isclose(error_E(plan, pat).sens, sens_upper_bound(plan.c_matrix(), pat), rel_tol=1e-15)
        big = plan_from_series(np.r_[c, np.zeros(30)])
        with pytest.raises(PreconditionError):
            error_E(big, ParticipationPattern(36, 2))

    def test_curve_point_matches_error_E(self):
        plan = build_plan("dtoep", "banded", 300, p=30)
        pat = ParticipationPattern(300, 30)
        assert error_curve(plan, pat, [123])[0] == error_E(plan, pat, t=123)

    def test_curve_range(self):
        with pytest.raises(PreconditionError):
            error_curve(build_plan("dtoep", "none", 5), ParticipationPattern(5, 1), [0])

    def test_banded_ordering(self):
        n = 8196
        pat = ParticipationPattern.from_k(n, 64)
        b = pat.b
        mb = error_E(build_plan("dtoep", "banded", n, p=b), pat).E_t
        mbi = error_E(build_plan("dtoep", "banded-inverse", n, p=b), pat).E_t
        sbi = error_E(build_plan("sqrt", "banded-inverse", n, p=math.ceil(math.log2(b))), pat).E_t
        assert mb <= mbi <= sbi


class TestLowerBound:
    def test_every_plan(self):
        for n in (16, 257, 1024, 4096):
            for b in sorted({1, 2, 7, n // 8 or 1, n // 2, n}):
                pat = ParticipationPattern(n, b)
                lb = lower_bound(pat)
                for kind, banding, p, nu in PLANS_SMALL:
                    plan = build_plan(kind, banding, n, p=p, nu=nu)
                    assert error_E(plan, pat).E_t >= lb * (1 - 1e-12)

    def test_matches_a_pi1(self):
        n, b = 50, 7
        pi = np.zeros(n)
        pi[::b] = 1
        direct = np.linalg.norm(running_means_dense(n) @ pi) / math.sqrt(n)
        assert math.isclose(lower_bound(ParticipationPattern(n, b)), direct, rel_tol=1e-13)


class TestNu:
    def test_optimum_beats_grid_endpoints(self):
        pat = ParticipationPattern.from_k(1024, 8)
        nu, val = optimize_nu("none", pat)
        assert 0 < nu < 1
        for other in (1e-4, 0.5, 1 - 1e-4):
            v = error_E(build_plan("nu", "none", 1024, nu=other), pat).E_t
            assert val <= v + 1e-15
