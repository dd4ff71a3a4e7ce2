"""Lower-triangular Toeplitz (LTT) series algebra and the named factorizations.

An n x n lower-triangular Toeplitz matrix is stored by its first column
``c_0..c_{n-1}``.  Products and inverses of such matrices are truncated
power-series products and inverses, so everything here is O(n^2) at worst
and O(n p) for p-banded factors.

The running-means workload is ``A = D E_1`` with ``D = diag(1, 1/2, ..., 1/n)``
and ``E_1`` the all-ones lower triangle.  Every factorization ``A = B C`` used
by the library has a Toeplitz ``C`` and ``B = D LTT(a)`` where ``a`` is the
running prefix sum of the first column of ``C^{-1}``.
"""

from __future__ import annotations

import enum
import functools
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

from .exceptions import PreconditionError, SingularSeriesError, SizeCapError

DENSE_CAP = 4096


@dataclass(frozen=True, eq=False)
class ToeplitzSeries:
    """First column of a lower-triangular Toeplitz matrix."""

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=np.float64).reshape(-1)
        if c.size < 1:
            raise PreconditionError("series must have length >= 1")
        if not np.all(np.isfinite(c)):
            raise PreconditionError("series coefficients must be finite")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def n(self) -> int:
        return self.coeffs.size

    def __len__(self) -> int:
        return self.coeffs.size

    def __getitem__(self, idx):
        return self.coeffs[idx]

    def __iter__(self):
        return iter(self.coeffs)

    def __repr__(self) -> str:
        head = np.array2string(self.coeffs[:6], precision=6, separator=", ")
        return f"ToeplitzSeries(n={self.n}, coeffs={head}{'...' if self.n > 6 else ''})"

    def scaled(self, alpha: float) -> ToeplitzSeries:
        return ToeplitzSeries(alpha * self.coeffs)

    def dense(self) -> np.ndarray:
        """Materialize the n x n matrix.  Test utility, capped at n = 4096."""
        return ltt_dense(self.coeffs)


def _as_array(s) -> np.ndarray:
    if isinstance(s, ToeplitzSeries):
        return s.coeffs
    return np.asarray(s, dtype=np.float64).reshape(-1)


def ltt_dense(coeffs) -> np.ndarray:
    c = _as_array(coeffs)
    n = c.size
    if n > DENSE_CAP:
        raise SizeCapError(f"dense materialization capped at n={DENSE_CAP}, got {n}")
    idx = np.subtract.outer(np.arange(n), np.arange(n))
    out = np.zeros((n, n))
    mask = idx >= 0
    out[mask] = c[idx[mask]]
    return out


def identity_series(n: int) -> ToeplitzSeries:
    c = np.zeros(n)
    c[0] = 1.0
    return ToeplitzSeries(c)


def ltt_multiply(a, b) -> ToeplitzSeries:
    """Truncated Cauchy product: ``result_i = sum_{j<=i} a_j b_{i-j}``."""
    a, b = _as_array(a), _as_array(b)
    if a.size != b.size:
        raise PreconditionError(f"length mismatch: {a.size} != {b.size}")
    return ToeplitzSeries(np.convolve(a, b)[: a.size])


def _invert_to_length(a: np.ndarray, n: int) -> np.ndarray:
    """First ``n`` coefficients of ``1/a(x)``.

    Runs the forward-substitution recursion
    ``y_i = -(1/a_0) sum_{j=1}^{i} a_j y_{i-j}`` as an all-pole filter.  Trailing
    zeros of ``a`` are dropped first, so a p-banded input costs O(n p).
    """
    if a[0] == 0.0:
        raise SingularSeriesError("leading coefficient is zero")
    nz = np.flatnonzero(a)
    a = a[: nz[-1] + 1]
    impulse = np.zeros(n)
    impulse[0] = 1.0
    return lfilter([1.0], a, impulse)


def ltt_invert(a) -> ToeplitzSeries:
    a = _as_array(a)
    return ToeplitzSeries(_invert_to_length(a, a.size))


@functools.lru_cache(maxsize=16)
def gregory_coeffs(m: int) -> ToeplitzSeries:
    """``g_0 = 1``, ``g_i = -sum_{j<i} g_j / (i + 1 - j)``.

    These are the signed Gregory coefficients, i.e. the first column of
    ``D_Toep^{-1}``; every ``g_i`` with ``i >= 1`` is negative.  The recursion
    is exactly inversion of the series ``1/(j+1)``.
    """
    if m < 1:
        raise PreconditionError("m must be >= 1")
    return ToeplitzSeries(_invert_to_length(1.0 / np.arange(1, m + 1, dtype=np.float64), m))


def dtoep_series(n: int) -> ToeplitzSeries:
    """First column of ``D_Toep``: ``c_j = 1/(j+1)``."""
    if n < 1:
        raise PreconditionError("n must be >= 1")
    return ToeplitzSeries(1.0 / np.arange(1, n + 1, dtype=np.float64))


def _sqrt_prefix_array(n: int) -> np.ndarray:
    j = np.arange(1, n, dtype=np.float64)
    return np.concatenate(([1.0], np.cumprod((2 * j - 1) / (2 * j))))


def _sqrt_prefix_inverse_array(n: int) -> np.ndarray:
    # coefficients of sqrt(1 - x)
    j = np.arange(1, n, dtype=np.float64)
    return np.concatenate(([1.0], np.cumprod((j - 1.5) / j)))


def sqrt_prefix_series(n: int) -> ToeplitzSeries:
    """First column of ``E_1^{1/2}``: ``r_j = |binom(-1/2, j)|``."""
    if n < 1:
        raise PreconditionError("n must be >= 1")
    return ToeplitzSeries(_sqrt_prefix_array(n))


def _check_nu(nu: float) -> None:
    if not (0.0 <= nu <= 1.0) or not np.isfinite(nu):
        raise PreconditionError(f"nu must lie in [0, 1], got {nu}")


def nu_sqrt_series(nu: float, n: int) -> ToeplitzSeries:
    """First column of ``E_nu^{1/2}``: ``r_j (1 - nu)^j``.

    ``nu = 0`` gives ``E_1^{1/2}`` and ``nu = 1`` the identity.
    """
    _check_nu(nu)
    if n < 1:
        raise PreconditionError("n must be >= 1")
    return ToeplitzSeries(_sqrt_prefix_array(n) * (1.0 - nu) ** np.arange(n))


def band(series, p: int) -> ToeplitzSeries:
    """Zero every coefficient at index >= p."""
    c = _as_array(series)
    if not 1 <= p <= c.size:
        raise PreconditionError(f"bandwidth p must satisfy 1 <= p <= {c.size}, got {p}")
    out = c.copy()
    out[p:] = 0.0
    return ToeplitzSeries(out)


def banded_inverse(series, p: int, n: int | None = None) -> ToeplitzSeries:
    """Invert, keep the first ``p`` coefficients of the inverse, invert back.

    Only the leading ``p`` coefficients of ``series`` influence the result, so
    ``series`` may be shorter than the output length ``n`` (default: its own
    length) as long as it has at least ``p`` entries.
    """
    c = _as_array(series)
    n = c.size if n is None else n
    if not 1 <= p <= min(c.size, n):
        raise PreconditionError(f"bandwidth p must satisfy 1 <= p <= {min(c.size, n)}, got {p}")
    inv_head = _invert_to_length(c[:p], p)
    return ToeplitzSeries(_invert_to_length(inv_head, n))


class Kind(enum.Enum):
    IDENTITY = "identity"
    SQRT_PREFIX = "sqrt"
    NU_DP_FTRL = "nu"
    MEAN_AWARE = "dtoep"


class Banding(enum.Enum):
    NOT_BANDED = "none"
    BANDED = "banded"
    BANDED_INVERSE = "banded-inverse"


@dataclass(frozen=True, eq=False)
class FactorizationPlan:
    """A factorization ``A = B C`` with ``C = LTT(c)`` and ``B = D LTT(a)``."""

    c_series: ToeplitzSeries
    a_series: ToeplitzSeries
    kind: Kind
    banding: Banding
    bandwidth: int | None = None  # None means full bandwidth
    nu: float | None = None
    label: str = field(default="")

    def __post_init__(self):
        if self.c_series.n != self.a_series.n:
            raise PreconditionError("c_series and a_series must have equal length")
        if not self.label:
            object.__setattr__(self, "label", plan_label(self.kind, self.banding, self.bandwidth, self.nu))

    @property
    def n(self) -> int:
        return self.c_series.n

    def b_matrix(self) -> np.ndarray:
        """Dense ``B = D LTT(a)`` (test utility)."""
        return ltt_dense(self.a_series) / np.arange(1, self.n + 1)[:, None]

    def c_matrix(self) -> np.ndarray:
        return ltt_dense(self.c_series)


def plan_label(kind: Kind, banding: Banding, bandwidth: int | None, nu: float | None) -> str:
    name = {
        Kind.IDENTITY: "I",
        Kind.SQRT_PREFIX: "E1^1/2",
        Kind.NU_DP_FTRL: "Enu^1/2",
        Kind.MEAN_AWARE: "D_Toep",
    }[kind]
    if kind is Kind.NU_DP_FTRL and nu is not None:
        name += f"(nu={nu:.4g})"
    if banding is not Banding.NOT_BANDED:
        name += f" {banding.value} p={bandwidth}"
    return name


def running_means_dense(n: int) -> np.ndarray:
    """Dense ``A`` with ``A_ij = 1/i`` for ``j <= i`` (1-based)."""
    if n > DENSE_CAP:
        raise SizeCapError(f"dense materialization capped at n={DENSE_CAP}, got {n}")
    return np.tril(np.ones((n, n))) / np.arange(1, n + 1)[:, None]


def _base_c_and_inverse(kind: Kind, n: int, nu: float | None) -> tuple[np.ndarray, np.ndarray]:
    if kind is Kind.IDENTITY:
        c = identity_series(n).coeffs
        return c, c
    if kind is Kind.MEAN_AWARE:
        return dtoep_series(n).coeffs, gregory_coeffs(n).coeffs
    if kind is Kind.SQRT_PREFIX:
        return _sqrt_prefix_array(n), _sqrt_prefix_inverse_array(n)
    if kind is Kind.NU_DP_FTRL:
        if nu is None:
            raise PreconditionError("NuDpFtrl requires nu")
        _check_nu(nu)
        # (c_j lam^j)^{-1} = (c^{-1})_j lam^j
        scale = (1.0 - nu) ** np.arange(n)
        return _sqrt_prefix_array(n) * scale, _sqrt_prefix_inverse_array(n) * scale
    raise PreconditionError(f"unknown kind {kind!r}")


def build_plan(
    kind: Kind | str,
    banding: Banding | str = Banding.NOT_BANDED,
    n: int = 1,
    p: int | None = None,
    nu: float | None = None,
) -> FactorizationPlan:
    """Build the (C, B) series pair for a named factorization of size ``n``."""
    kind = Kind(kind)
    banding = Banding(banding)
    if n < 1:
        raise PreconditionError("n must be >= 1")
    if banding is Banding.NOT_BANDED or kind is Kind.IDENTITY:
        bandwidth = None if banding is Banding.NOT_BANDED else p
        c, c_inv = _base_c_and_inverse(kind, n, nu)
    else:
        if p is None:
            raise PreconditionError(f"{banding.value} factorization requires a bandwidth p")
        if not 1 <= p <= n:
            raise PreconditionError(f"bandwidth p must satisfy 1 <= p <= {n}, got {p}")
        bandwidth = p
        # only the leading p coefficients survive banding, so build just those
        head_c, head_inv = _base_c_and_inverse(kind, p, nu)
        if banding is Banding.BANDED:
            c = np.zeros(n)
            c[:p] = head_c
            c_inv = _invert_to_length(c, n)
        else:
            c_inv = np.zeros(n)
            c_inv[:p] = head_inv
            c = _invert_to_length(c_inv, n)
    return FactorizationPlan(
        c_series=ToeplitzSeries(c),
        a_series=ToeplitzSeries(np.cumsum(c_inv)),
        kind=kind,
        banding=banding,
        bandwidth=bandwidth,
        nu=nu if kind is Kind.NU_DP_FTRL else None,
    )


def plan_from_series(c, kind: Kind = Kind.MEAN_AWARE, banding: Banding = Banding.NOT_BANDED,
                     bandwidth: int | None = None, label: str = "") -> FactorizationPlan:
    """Wrap an arbitrary invertible correlation series as a plan."""
    c = _as_array(c)
    return FactorizationPlan(
        c_series=ToeplitzSeries(c),
        a_series=ToeplitzSeries(np.cumsum(_invert_to_length(c, c.size))),
        kind=kind,
        banding=banding,
        bandwidth=bandwidth,
        label=label,
    )
