"""Bounded-memory streaming release of private running means.

Noise is correlated on the input side: each observation is perturbed by
``sum_{j<p} g_j z_{t-j}`` where ``g`` is the p-banded inverse of the
correlation series, and the running mean of the perturbed inputs is
released.  Since ``(C^p)^{-1}`` is p-banded only the last p noise vectors are
kept, so memory is O(p d) regardless of the stream length.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import (
    ConfigurationError,
    NormViolationError,
    PreconditionError,
    SizeCapError,
    StreamExhaustedError,
)
from .metrics import PrivacyBudget, frob_prefix
from .sensitivity import ParticipationPattern, is_monotone_nonneg, sens_min_sep
from .series import (
    DENSE_CAP,
    Banding,
    FactorizationPlan,
    Kind,
    ToeplitzSeries,
    _base_c_and_inverse,
    _invert_to_length,
    running_means_dense,
)

CLIP_MODES = ("reject", "clip")


def gaussian_block(seed: int, t: int, shape) -> np.ndarray:
    """Standard normals for step ``t``, keyed by ``(seed, t)``.

    Philox is counter-based: the step index goes into the counter, so a
    step's draw does not depend on which steps were drawn before it.
    """
    bitgen = np.random.Philox(key=seed & ((1 << 128) - 1), counter=[0, 0, 0, t])
    return np.random.Generator(bitgen).standard_normal(shape)


@dataclass(frozen=True)
class EstimatorConfig:
    budget: PrivacyBudget
    pattern: ParticipationPattern
    p: int
    d: int = 1
    clip_mode: str = "reject"
    seed: int = 0
    kind: Kind = Kind.MEAN_AWARE
    nu: float | None = None
    replicas: int | None = None  # run this many independent streams side by side
    sigma_override: float | None = None  # test hook; 0 disables noise

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if not 1 <= self.p <= self.pattern.n:
            raise ConfigurationError(f"bandwidth must satisfy 1 <= p <= n={self.pattern.n}, got {self.p}")
        if self.d < 1:
            raise ConfigurationError("dimension d must be >= 1")
        if self.clip_mode not in CLIP_MODES:
            raise ConfigurationError(f"clip_mode must be one of {CLIP_MODES}")
        if self.replicas is not None and self.replicas < 1:
            raise ConfigurationError("replicas must be >= 1")

    @property
    def n(self) -> int:
        return self.pattern.n


class StreamingMeanEstimator:
    """Sequential private running-mean estimator.

    Precomputes the banded inverse coefficients ``g_0..g_{p-1}``, the
    correlation series ``c^p``, its min-separation sensitivity ``S`` and the
    noise scale ``sigma = sigma_{eps,delta} * xi * S``.
    """

    def __init__(self, config: EstimatorConfig):
        self.config = config
        n, p = config.n, config.p
        _, c_inv = _base_c_and_inverse(config.kind, p, config.nu)
        self.g = c_inv[:p].copy()
        self.c = ToeplitzSeries(_invert_to_length(self.g, n))
        if not is_monotone_nonneg(self.c):
            raise ConfigurationError(
                f"banded-inverse series for {config.kind.value} with p={p} is not "
                "non-negative and non-increasing; exact sensitivity unavailable"
            )
        self.sensitivity = sens_min_sep(self.c, config.pattern)
        budget = config.budget
        if config.sigma_override is not None:
            self.sigma = float(config.sigma_override)
        else:
            self.sigma = budget.sigma * budget.xi * self.sensitivity
        shape = (config.d,) if config.replicas is None else (config.replicas, config.d)
        self._shape = shape
        self.t = 0
        self.running_sum = np.zeros(shape)
        self._ring = np.zeros((p,) + shape)

    @property
    def retained_noise(self) -> int:
        return min(self.config.p, self.t)

    def plan(self) -> FactorizationPlan:
        """The factorization this estimator realizes: ``C = c^p``."""
        g = np.zeros(self.config.n)
        g[: self.config.p] = self.g
        a = np.cumsum(g)
        return FactorizationPlan(
            c_series=self.c,
            a_series=ToeplitzSeries(a),
            kind=self.config.kind,
            banding=Banding.BANDED_INVERSE,
            bandwidth=self.config.p,
            nu=self.config.nu,
        )

    def noise(self, t: int) -> np.ndarray:
        """The noise vector ``z_t`` (1-based) drawn at step t."""
        if self.sigma == 0.0:
            return np.zeros(self._shape)
        return self.sigma * gaussian_block(self.config.seed, t, self._shape)

    def _prepare(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != self._shape:
            raise PreconditionError(f"expected observation of shape {self._shape}, got {x.shape}")
        xi = self.config.budget.xi
        norms = np.linalg.norm(x, axis=-1, keepdims=True)
        if self.config.clip_mode == "reject":
            if np.any(norms > xi * (1 + 1e-12)):
                raise NormViolationError(f"observation norm {norms.max():.6g} exceeds xi={xi}")
            return x
        scale = np.minimum(1.0, xi / np.maximum(norms, np.finfo(float).tiny))
        return x * scale

    def observe(self, x) -> np.ndarray:
        if self.t >= self.config.n:
            raise StreamExhaustedError(f"stream length n={self.config.n} already consumed")
        x = self._prepare(x)
        self.t += 1
        t, p = self.t, self.config.p
        slot = (t - 1) % p
        self._ring[slot] = self.noise(t)
        lags = min(p, t)
        # ring slot of z_{t-j} is (t - 1 - j) mod p
        idx = (slot - np.arange(lags)) % p
        u = x + np.tensordot(self.g[:lags], self._ring[idx], axes=1)
        self.running_sum += u
        return self.running_sum / t

    def run(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        return np.stack([self.observe(x) for x in X])


def offline_recompose(config: EstimatorConfig, X, Z) -> np.ndarray:
    """Dense ``A X + B Z`` with ``B = A (C^p)^{-1}``, for checking the stream."""
    n = config.n
    if n > DENSE_CAP:
        raise SizeCapError(f"offline recomposition capped at n={DENSE_CAP}, got {n}")
    X = np.asarray(X, dtype=np.float64)
    Z = np.asarray(Z, dtype=np.float64)
    if X.shape[0] != n or Z.shape[0] != n:
        raise PreconditionError("X and Z must have n rows")
    _, c_inv = _base_c_and_inverse(config.kind, config.p, config.nu)
    g = np.zeros(n)
    g[: config.p] = c_inv[: config.p]
    A = running_means_dense(n)
    C_inv = ToeplitzSeries(g).dense()
    B = A @ C_inv
    return np.einsum("ij,j...->i...", A, X) + np.einsum("ij,j...->i...", B, Z)


def noise_matrix(estimator: StreamingMeanEstimator) -> np.ndarray:
    """All noise draws ``z_1..z_n`` the estimator uses, stacked."""
    return np.stack([estimator.noise(t) for t in range(1, estimator.config.n + 1)])


def predicted_mse(estimator: StreamingMeanEstimator, t: int) -> float:
    """``E[(1/t) ||(Y_hat - Y)_{:t}||_F^2] = d sigma^2 (1/t) ||B_{:t}||_F^2``."""
    return estimator.config.d * estimator.sigma**2 * frob_prefix(estimator.plan(), t) ** 2 / t


def default_bandwidth(kind: Kind, b: int) -> int:
    if kind is Kind.SQRT_PREFIX:
        return max(1, math.ceil(math.log2(b))) if b > 1 else 1
    return b
