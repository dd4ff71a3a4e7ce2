"""Analytic error of a factorization and Gaussian-mechanism calibration.

The error at step t is ``E_t = ||B_{:t}||_F * sens / sqrt(t)`` where ``B_{:t}``
is the first t rows of B.  With ``B = D LTT(a)`` row m of B has squared norm
``(1/m^2) sum_{j<m} a_j^2`` so every E_t follows from one running sum.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .exceptions import PreconditionError
from .sensitivity import (
    ENUM_CAP,
    ParticipationPattern,
    is_monotone_nonneg,
    sens_min_sep,
    sens_upper_bound,
)
from .series import Banding, FactorizationPlan, Kind, build_plan


def gaussian_scale(eps: float, delta: float) -> float:
    """Noise multiplier ``sqrt(2 ln(1.25/delta)) / eps``."""
    if not eps > 0:
        raise PreconditionError(f"eps must be > 0, got {eps}")
    if not 0 < delta < 1:
        raise PreconditionError(f"delta must lie in (0, 1), got {delta}")
    return math.sqrt(2.0 * math.log(1.25 / delta)) / eps


@dataclass(frozen=True)
class PrivacyBudget:
    eps: float
    delta: float
    xi: float = 1.0

    def __post_init__(self):
        gaussian_scale(self.eps, self.delta)
        if not self.xi > 0:
            raise PreconditionError(f"clip norm xi must be > 0, got {self.xi}")
        if self.eps >= 1:
            warnings.warn(
                f"eps={self.eps} is outside (0, 1), where the Gaussian calibration is proven",
                stacklevel=3,
            )

    @property
    def sigma(self) -> float:
        return gaussian_scale(self.eps, self.delta)

    @property
    def formal(self) -> bool:
        return 0 < self.eps < 1 and 0 < self.delta < 1


@dataclass(frozen=True)
class ErrorReport:
    t: int
    E_t: float
    frob_prefix: float
    sens: float
    per_step_std: float | None = None


def _row_sq_norms(plan: FactorizationPlan) -> np.ndarray:
    """``||b_m||^2`` for m = 1..n."""
    a = plan.a_series.coeffs
    m = np.arange(1, a.size + 1, dtype=np.float64)
    return np.cumsum(a * a) / (m * m)


def frob_prefix_curve(plan: FactorizationPlan) -> np.ndarray:
    """``||B_{:t}||_F`` for t = 1..n."""
    return np.sqrt(np.cumsum(_row_sq_norms(plan)))


def frob_prefix(plan: FactorizationPlan, t: int) -> float:
    if not 1 <= t <= plan.n:
        raise PreconditionError(f"t must lie in [1, {plan.n}], got {t}")
    return float(frob_prefix_curve(plan)[t - 1])


def row_norm(plan: FactorizationPlan, t: int) -> float:
    """``||b_t||_2``, the norm of row t of B."""
    if not 1 <= t <= plan.n:
        raise PreconditionError(f"t must lie in [1, {plan.n}], got {t}")
    return float(math.sqrt(_row_sq_norms(plan)[t - 1]))


def plan_sensitivity(plan: FactorizationPlan, pattern: ParticipationPattern) -> float:
    """Exact closed form when admissible, enumeration at small n, else error."""
    if pattern.n != plan.n:
        raise PreconditionError(f"plan size {plan.n} != pattern n {pattern.n}")
    c = plan.c_series
    if is_monotone_nonneg(c):
        return sens_min_sep(c, pattern)
    if plan.n <= ENUM_CAP:
        return sens_upper_bound(c.dense(), pattern)
    raise PreconditionError(
        f"{plan.label}: series is not monotone non-negative and n={plan.n} is too large "
        "for enumeration"
    )


def error_curve(
    plan: FactorizationPlan,
    pattern: ParticipationPattern,
    t_grid: Iterable[int] | None = None,
    budget: PrivacyBudget | None = None,
) -> list[ErrorReport]:
    sens = plan_sensitivity(plan, pattern)
    rows = _row_sq_norms(plan)
    frob = np.sqrt(np.cumsum(rows))
    ts = range(1, plan.n + 1) if t_grid is None else list(t_grid)
    out = []
    for t in ts:
        t = int(t)
        if not 1 <= t <= plan.n:
            raise PreconditionError(f"t must lie in [1, {plan.n}], got {t}")
        std = None
        if budget is not None:
            std = budget.sigma * budget.xi * sens * math.sqrt(rows[t - 1])
        f = float(frob[t - 1])
        out.append(ErrorReport(t=t, E_t=f * sens / math.sqrt(t), frob_prefix=f, sens=sens, per_step_std=std))
    return out


def error_E(
    plan: FactorizationPlan,
    pattern: ParticipationPattern,
    budget: PrivacyBudget | None = None,
    t: int | None = None,
) -> ErrorReport:
    t = plan.n if t is None else t
    return error_curve(plan, pattern, [t], budget)[0]


def lower_bound(pattern: ParticipationPattern) -> float:
    """``(1/sqrt(n)) * sqrt(sum_j (ceil(j/b)/j)^2)``; no factorization beats it at t = n."""
    j = np.arange(1, pattern.n + 1, dtype=np.float64)
    return float(math.sqrt(np.sum((np.ceil(j / pattern.b) / j) ** 2) / pattern.n))


NU_GRID_SIZE = 200
NU_LO, NU_HI = 1e-4, 1 - 1e-4


def optimize_nu(
    banding: Banding | str,
    pattern: ParticipationPattern,
    p: int | None = None,
    grid_size: int = NU_GRID_SIZE,
) -> tuple[float, float]:
    """Minimize ``E_n`` of the nu-DP-FTRL plan over nu.

    Geometric grid on ``[1e-4, 1 - 1e-4]`` followed by one golden-section
    refinement between the grid neighbours of the best point.
    Returns ``(nu, E_n)``.
    """
    banding = Banding(banding)

    def objective(nu: float) -> float:
        plan = build_plan(Kind.NU_DP_FTRL, banding, pattern.n, p=p, nu=float(nu))
        return error_E(plan, pattern).E_t

    grid = np.geomspace(NU_LO, NU_HI, grid_size)
    vals = np.array([objective(v) for v in grid])
    i = int(np.argmin(vals))
    best_nu, best_val = float(grid[i]), float(vals[i])
    if 0 < i < grid_size - 1:
        res = minimize_scalar(objective, bracket=(grid[i - 1], grid[i], grid[i + 1]),
                              method="golden", options={"xtol": 1e-8})
        if res.fun < best_val and NU_LO <= res.x <= NU_HI:
            best_nu, best_val = float(res.x), float(res.fun)
    return best_nu, best_val


def nu_plan(banding: Banding | str, pattern: ParticipationPattern, p: int | None = None) -> FactorizationPlan:
    nu, _ = optimize_nu(banding, pattern, p)
    return build_plan(Kind.NU_DP_FTRL, banding, pattern.n, p=p, nu=nu)


def harmonic(n: int) -> float:
    return math.fsum(1.0 / j for j in range(1, n + 1))


def identity_closed_form(n: int) -> float:
    """``E_n`` of the input-perturbation factorization at k = 1: ``sqrt(H_n / n)``."""
    return math.sqrt(harmonic(n) / n)


def expected_noise_mse(plan: FactorizationPlan, sigma: float, d: int, ts: Sequence[int]) -> np.ndarray:
    """``E[(1/t) ||(B Z)_{:t}||_F^2]`` for i.i.d. N(0, sigma^2) noise Z in d dims."""
    frob = frob_prefix_curve(plan)
    ts = np.asarray(ts, dtype=int)
    return d * sigma**2 * frob[ts - 1] ** 2 / ts
