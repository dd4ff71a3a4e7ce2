"""Exponential withhold-release estimator.

Runs ``L + 1 = floor(log2 k) + 1`` prefix-sum matrix mechanisms.  Level ``l``
consumes, for every user, the average of that user's observations with
indices ``I_l`` (``{1}`` for ``l = 0``, ``{2^(l-1)+1, ..., 2^l}`` otherwise).
A level switches on once the users are diverse enough to form ``K_c``
disjoint groups for a private crude mean; the crude mean centres a
projection box that bounds each user's contribution before noise is added.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.signal import lfilter

from .exceptions import ConfigurationError, PreconditionError
from .metrics import PrivacyBudget, gaussian_scale
from .sensitivity import sens_single
from .series import FactorizationPlan, build_plan


@dataclass(frozen=True, eq=False)
class ArrivalPattern:
    """Which user (0-based, in ``[0, b)``) contributes at each step."""

    user_ids: np.ndarray
    b: int

    def __post_init__(self):
        u = np.asarray(self.user_ids, dtype=np.int64).reshape(-1)
        if u.size and (u.min() < 0 or u.max() >= self.b):
            raise PreconditionError(f"user ids must lie in [0, {self.b})")
        u.setflags(write=False)
        object.__setattr__(self, "user_ids", u)

    @property
    def n(self) -> int:
        return self.user_ids.size

    @property
    def k(self) -> int:
        """Largest number of contributions by a single user."""
        return int(np.bincount(self.user_ids, minlength=self.b).max()) if self.n else 0

    @classmethod
    def round_robin(cls, b: int, k: int) -> ArrivalPattern:
        """User u contributes at steps u, b + u, 2b + u, ... (1-based u)."""
        return cls(np.tile(np.arange(b), k), b)

    @classmethod
    def random(cls, b: int, n: int, rng: np.random.Generator) -> ArrivalPattern:
        return cls(rng.integers(0, b, size=n), b)

    def min_separation(self) -> int:
        """Smallest gap between two contributions of the same user (n if none)."""
        last: dict[int, int] = {}
        gap = self.n
        for t, u in enumerate(self.user_ids):
            if u in last:
                gap = min(gap, t - last[u])
            last[u] = t
        return gap


def greedy_bin_covering(counts: Sequence[int], m: float) -> list[list[int]]:
    """Greedy sequential bin covering.

    Users are added in order to the open bin, which closes as soon as
    ``sum min(k_u, m) >= m``.  The last, unclosed bin is dropped.
    """
    if not m > 0:
        raise PreconditionError("bin size m must be > 0")
    bins, current, filled = [], [], 0.0
    for u, k_u in enumerate(counts):
        current.append(u)
        filled += min(k_u, m)
        if filled >= m:
            bins.append(current)
            current, filled = [], 0.0
    return bins


def bucket_index(values, tau_prime: float) -> np.ndarray:
    """Index k of the bucket ``(2k tau' - tau', 2k tau' + tau']`` holding each value."""
    v = np.asarray(values, dtype=np.float64)
    return np.ceil((v - tau_prime) / (2.0 * tau_prime)).astype(np.int64)


def histogram_noise_scale(eps: float, delta: float) -> float:
    # replacing one value moves one unit between two buckets: l2 sensitivity sqrt(2)
    return math.sqrt(2.0) * gaussian_scale(eps, delta)


def histogram_threshold(eps: float, delta: float) -> float:
    return 1.0 + histogram_noise_scale(eps, delta) * math.sqrt(2.0 * math.log(2.0 / delta))


def stable_histogram(values, tau_prime: float, eps: float, delta: float,
                     rng: np.random.Generator) -> dict[int, float]:
    """Noisy counts of occupied buckets, zeroed below a delta-calibrated threshold.

    Only occupied buckets are ever reported, so an empty bucket never wins.
    """
    if not 0 < eps < 1 or not 0 < delta < 1:
        raise PreconditionError("eps and delta must lie in (0, 1)")
    idx = bucket_index(values, tau_prime)
    if idx.size == 0:
        return {}
    keys, counts = np.unique(idx, return_counts=True)
    noisy = counts + histogram_noise_scale(eps, delta) * rng.standard_normal(keys.size)
    noisy[noisy < histogram_threshold(eps, delta)] = 0.0
    return {int(k_): float(s) for k_, s in zip(keys, noisy)}


@dataclass(frozen=True, eq=False)
class ProjectionBox:
    """Axis-aligned box ``prod_j [center_j - half_width_j, center_j + half_width_j]``."""

    center: np.ndarray
    half_width: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.center, dtype=np.float64).reshape(-1)
        h = np.broadcast_to(np.asarray(self.half_width, dtype=np.float64), c.shape).copy()
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "half_width", h)

    @classmethod
    def unbounded(cls, d: int) -> ProjectionBox:
        return cls(np.zeros(d), np.full(d, np.inf))

    @property
    def d(self) -> int:
        return self.center.size

    @property
    def lower(self) -> np.ndarray:
        return self.center - self.half_width

    @property
    def upper(self) -> np.ndarray:
        return self.center + self.half_width

    def diam_l2(self) -> float:
        return float(2.0 * np.linalg.norm(self.half_width))

    def diam_linf(self) -> float:
        return float(2.0 * self.half_width.max())

    def project(self, z) -> np.ndarray:
        return np.clip(z, self.lower, self.upper)

    def contains(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        return np.all((z >= self.lower) & (z <= self.upper), axis=-1)


def projection_interval(Y, tau_prime: float, tau: float, eps: float, delta: float,
                        rng: np.random.Generator) -> ProjectionBox:
    """Private box around the common centre of the rows of ``Y`` (K x d)."""
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    K, d = Y.shape
    if K < 1:
        raise PreconditionError("need at least one row")
    eps_c = eps / math.sqrt(8.0 * d * math.log(2.0 / delta))
    delta_c = delta / (2.0 * d)
    center = np.zeros(d)
    for j in range(d):
        scores = stable_histogram(Y[:, j], tau_prime, eps_c, delta_c, rng)
        positive = sorted(k_ for k_, s in scores.items() if s > 0)
        if positive:
            best = max(positive, key=lambda k_: (scores[k_], -k_))
            center[j] = 2.0 * best * tau_prime
    return ProjectionBox(center, np.full(d, 2.0 * tau_prime + tau))


def kc_lhs(K, eps: float, delta: float, levels: int):
    K = np.asarray(K, dtype=np.float64)
    return (2.0 * levels * K * math.exp(eps) / delta) * np.exp(-eps * K / 64.0) + \
        2.0 * levels * np.exp(-K / 2048.0)


def compute_kc(eps: float, delta: float, gamma: float, levels: int) -> int:
    """Smallest ``K >= 4`` with ``kc_lhs(K) <= gamma``.

    The first term rises until ``K = 64/eps`` and falls afterwards, so the
    rising stretch is scanned exhaustively and the falling one searched by
    doubling then bisection.
    """
    if not 0 < gamma < 1:
        raise PreconditionError("gamma must lie in (0, 1)")
    if levels <= 0:
        return 4
    peak = max(4, math.ceil(64.0 / eps))
    head = np.arange(4, peak + 1)
    ok = np.flatnonzero(kc_lhs(head, eps, delta, levels) <= gamma)
    if ok.size:
        return int(head[ok[0]])
    lo, hi = peak, 2 * peak
    while kc_lhs(hi, eps, delta, levels) > gamma:
        lo, hi = hi, 2 * hi
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if kc_lhs(mid, eps, delta, levels) <= gamma:
            hi = mid
        else:
            lo = mid
    return int(hi)


def level_indices(level: int) -> range:
    """1-based observation indices averaged by ``level``."""
    if level == 0:
        return range(1, 2)
    return range(2 ** (level - 1) + 1, 2**level + 1)


@dataclass
class _Level:
    index: int
    size: int
    active: bool = False
    members: list[int] = field(default_factory=list)
    buffer: list[int] = field(default_factory=list)
    box: ProjectionBox | None = None
    sigma: float = 0.0
    noise_prefix: np.ndarray | None = None
    proj_sum: np.ndarray | None = None


class WithholdReleaseEstimator:
    """Streaming withhold-release estimator over ``b`` users with at most ``k`` turns each.

    ``plan`` factors the size-b prefix-sum matrix as ``E_1 = LTT(a) LTT(c)``
    (default ``B = C = E_1^{1/2}``).  ``kc`` overrides the diversity constant,
    which at realistic privacy levels is far larger than any desk-sized ``b``.
    ``bounded`` pre-activates levels 0 and 1 with the box ``[-zeta, zeta]^d``.
    ``noiseless`` and ``project=False`` switch off noise and projection.
    """

    def __init__(self, b: int, k: int, d: int, budget: PrivacyBudget, zeta: float = 1.0,
                 plan: FactorizationPlan | None = None, beta: float = 0.05,
                 gamma: float | None = None, kc: int | None = None, bounded: bool = False,
                 noiseless: bool = False, project: bool = True, seed: int = 0):
        if b < 1 or k < 1 or d < 1:
            raise ConfigurationError("b, k and d must be >= 1")
        if not project and not noiseless:
            raise ConfigurationError("projection can only be disabled together with noise")
        self.b, self.k, self.d = b, k, d
        self.zeta = zeta
        self.L = int(math.floor(math.log2(k)))
        self.budget = budget
        parts = 2 * self.L + 2
        self.eps_level, self.delta_level = budget.eps / parts, budget.delta / parts
        self.eps_crude = self.eps_level / math.sqrt(8 * d * math.log(4 * d / self.delta_level))
        self.delta_crude = self.delta_level / (2 * d)
        self.gamma = beta / d if gamma is None else gamma
        self.kc = kc if kc is not None else compute_kc(self.eps_crude, self.delta_crude,
                                                        self.gamma, self.L)
        if b < 2 * self.kc:
            raise ConfigurationError(
                f"b={b} < 2*K_c={2 * self.kc}: the diversity condition can never hold"
            )
        self.plan = plan if plan is not None else build_plan("sqrt", "none", b)
        if self.plan.n != b:
            raise ConfigurationError(f"factorization must have size b={b}, got {self.plan.n}")
        self.sens = sens_single(self.plan.c_series)
        self.noiseless, self.project = noiseless, project
        self.rng = np.random.Generator(np.random.Philox(key=seed))
        self.t = 0
        self.counts = np.zeros(b, dtype=np.int64)
        self.obs: list[list[np.ndarray]] = [[] for _ in range(b)]
        self.z: dict[tuple[int, int], np.ndarray] = {}
        self.levels = [_Level(l, len(level_indices(l))) for l in range(self.L + 1)]
        self.mechanisms_used = 0
        self.intervals_used = 0
        if bounded:
            for lvl in self.levels[:2]:
                self._activate(lvl, ProjectionBox(np.zeros(d), np.full(d, zeta)))

    # ------------------------------------------------------------------ budget
    def budget_split(self) -> tuple[float, float]:
        return self.eps_level, self.delta_level

    # --------------------------------------------------------------- internals
    def _tau(self, size: int) -> tuple[float, float]:
        L = max(self.L, 1)
        tau_p = math.sqrt(2 * self.zeta**2 * math.log(2 * L * self.kc * self.d / self.gamma) / size)
        tau = math.sqrt(2 * self.zeta**2 * math.log(2 * L * self.d * self.b / self.gamma) / size)
        return tau_p, tau

    def crude_means(self, lvl: _Level) -> tuple[np.ndarray, list[list[int]]]:
        bins = greedy_bin_covering(self.counts, lvl.size)[: self.kc]
        Y = np.empty((len(bins), self.d))
        for i, group in enumerate(bins):
            total = sum(int(self.counts[u]) for u in group)
            Y[i] = sum((np.sum(self.obs[u], axis=0) for u in group if self.counts[u]),
                       np.zeros(self.d)) / total
        return Y, bins

    def _activate(self, lvl: _Level, box: ProjectionBox | None = None) -> None:
        if box is None:
            if self.project:
                Y, _ = self.crude_means(lvl)
                tau_p, tau = self._tau(lvl.size)
                box = projection_interval(Y, tau_p, tau, self.eps_level, self.delta_level, self.rng)
                self.intervals_used += 1
            else:
                box = ProjectionBox.unbounded(self.d)
        lvl.box = box
        lvl.active = True
        self.mechanisms_used += 1
        lvl.sigma = 0.0 if self.noiseless else (
            gaussian_scale(self.eps_level, self.delta_level) * self.sens * box.diam_l2() / 2.0
        )
        lvl.proj_sum = np.zeros(self.d)
        if lvl.sigma > 0:
            xi = lvl.sigma * self.rng.standard_normal((self.b, self.d))
            # row m of LTT(a) applied to the noise, for every m at once
            lvl.noise_prefix = lfilter(self.plan.a_series.coeffs, [1.0], xi, axis=0)
        pending, lvl.buffer = lvl.buffer, []
        for u in pending:
            self._admit(lvl, u)

    def _admit(self, lvl: _Level, u: int) -> None:
        lvl.members.append(u)
        lvl.proj_sum += lvl.box.project(self.z[(lvl.index, u)])

    # ------------------------------------------------------------------ public
    def observe(self, u: int, x) -> np.ndarray:
        u = int(u)
        x = np.asarray(x, dtype=np.float64).reshape(self.d)
        if self.counts[u] >= self.k:
            raise PreconditionError(f"user {u} exceeds the declared k={self.k} contributions")
        self.t += 1
        self.obs[u].append(x)
        self.counts[u] += 1
        c = int(self.counts[u])
        if c & (c - 1) == 0:
            lvl = self.levels[c.bit_length() - 1]
            idx = level_indices(lvl.index)
            self.z[(lvl.index, u)] = np.mean([self.obs[u][i - 1] for i in idx], axis=0)
            if lvl.active:
                self._admit(lvl, u)
            else:
                lvl.buffer.append(u)
        for lvl in self.levels:
            if not lvl.active and self.diverse(lvl.size):
                self._activate(lvl)
        return self.release()

    def diverse(self, size: int) -> bool:
        return int(np.minimum(self.counts, size).sum()) >= size * 2 * self.kc

    def release(self) -> np.ndarray:
        num = np.zeros(self.d)
        den = 0
        for lvl in self.levels:
            m = len(lvl.members)
            if not lvl.active or m == 0:
                continue
            term = lvl.proj_sum.copy()
            if lvl.noise_prefix is not None:
                term += lvl.noise_prefix[m - 1]
            num += lvl.size * term
            den += lvl.size * m
        return num / den if den else np.zeros(self.d)

    @property
    def active_levels(self) -> list[int]:
        return [lvl.index for lvl in self.levels if lvl.active]

    def effective_sample_size(self) -> int:
        return sum(lvl.size * len(lvl.members) for lvl in self.levels if lvl.active)

    def withheld(self) -> int:
        """Observations not yet folded into any per-user level average."""
        cap = 2**self.L
        covered = np.where(self.counts > 0,
                           np.minimum(2 ** np.floor(np.log2(np.maximum(self.counts, 1))), cap), 0)
        return int((self.counts - covered).sum())

    def buffered(self) -> int:
        return sum(lvl.size * len(lvl.buffer) for lvl in self.levels)

    def released_indices(self) -> dict[int, list[int]]:
        """For each user, the 1-based indices of observations in the current estimate."""
        out: dict[int, list[int]] = {}
        for lvl in self.levels:
            if lvl.active:
                for u in lvl.members:
                    out.setdefault(u, []).extend(level_indices(lvl.index))
        return out


@dataclass
class WithholdReleaseResult:
    mu: np.ndarray
    withheld: np.ndarray
    buffered: np.ndarray
    effective: np.ndarray
    active: list[list[int]]
    estimator: WithholdReleaseEstimator


def withhold_release_run(X, arrival: ArrivalPattern, budget: PrivacyBudget,
                         plan: FactorizationPlan | None = None, k: int | None = None,
                         **kwargs) -> WithholdReleaseResult:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] != arrival.n:
        raise PreconditionError("X and arrival pattern lengths differ")
    est = WithholdReleaseEstimator(arrival.b, k or arrival.k, X.shape[1], budget, plan=plan, **kwargs)
    n = arrival.n
    mu = np.empty_like(X)
    withheld = np.empty(n, dtype=np.int64)
    buffered = np.empty(n, dtype=np.int64)
    effective = np.empty(n, dtype=np.int64)
    active = []
    for t, (u, x) in enumerate(zip(arrival.user_ids, X)):
        mu[t] = est.observe(u, x)
        withheld[t] = est.withheld()
        buffered[t] = est.buffered()
        effective[t] = est.effective_sample_size()
        active.append(est.active_levels)
    return WithholdReleaseResult(mu, withheld, buffered, effective, active, est)
