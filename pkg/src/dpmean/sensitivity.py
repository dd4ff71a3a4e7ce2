"""Multi-participation sensitivity under b-min-separation.

A user may contribute at most ``k = ceil(n/b)`` times, with any two
contributions at least ``b`` steps apart.  For a lower-triangular Toeplitz
``C`` with non-negative, non-increasing first column the sensitivity is the
l2 norm of the sum of columns ``1, 1+b, 1+2b, ...``; for anything else
:func:`sens_upper_bound` enumerates the admissible participation sets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import PreconditionError, SizeCapError
from .series import ToeplitzSeries, _as_array

MONOTONE_TOL = 1e-12
ENUM_CAP = 24


@dataclass(frozen=True)
class ParticipationPattern:
    n: int
    b: int

    def __post_init__(self):
        if self.n < 1 or not 1 <= self.b <= self.n:
            raise PreconditionError(f"need 1 <= b <= n, got n={self.n}, b={self.b}")

    @property
    def k(self) -> int:
        return -(-self.n // self.b)

    @classmethod
    def from_k(cls, n: int, k: int) -> ParticipationPattern:
        """Pattern with ``b = ceil(n/k)``."""
        if not 1 <= k <= n:
            raise PreconditionError(f"need 1 <= k <= n, got n={n}, k={k}")
        return cls(n, -(-n // k))


def sens_single(c) -> float:
    """Largest column norm of ``LTT(c)``, which is the norm of the first column."""
    return float(np.linalg.norm(_as_array(c)))


def is_monotone_nonneg(c, tol: float = MONOTONE_TOL) -> bool:
    c = _as_array(c)
    return bool(c.min() >= -tol and (c.size < 2 or np.diff(c).max() <= tol))


def strided_column_sum(c, b: int) -> np.ndarray:
    """``s_i = sum_{j >= 0, jb <= i} c_{i - jb}``, i.e. ``s_i = c_i + s_{i-b}``."""
    c = _as_array(c)
    n = c.size
    rows = -(-n // b)
    padded = np.zeros(rows * b)
    padded[:n] = c
    return np.cumsum(padded.reshape(rows, b), axis=0).reshape(-1)[:n]


def sens_min_sep(c, pattern: ParticipationPattern) -> float:
    c = _as_array(c)
    if c.size != pattern.n:
        raise PreconditionError(f"series length {c.size} != pattern n {pattern.n}")
    if not is_monotone_nonneg(c):
        raise PreconditionError(
            "closed-form sensitivity needs non-negative, non-increasing coefficients; "
            "use sens_upper_bound for this series"
        )
    return float(np.linalg.norm(strided_column_sum(c, pattern.b)))


def sens_upper_bound(C, pattern: ParticipationPattern, prune: bool = True) -> float:
    """``max_{pi} sqrt(sum_{i,j in pi} |(C^T C)_ij|)`` over all admissible ``pi``.

    ``pi`` ranges over index sets of size at most ``k`` with pairwise gaps of at
    least ``b``.  Every term is non-negative, so enlarging ``pi`` never lowers
    the objective and only maximal sets need scoring: with ``prune`` the search
    starts in ``[0, b)``, steps by gaps in ``[b, 2b)`` and stops at size ``k`` or
    when no index fits.  ``prune=False`` scores every admissible set.
    """
    if isinstance(C, ToeplitzSeries):
        C = C.dense()
    C = np.asarray(C, dtype=np.float64)
    n = C.shape[1]
    if n != pattern.n:
        raise PreconditionError(f"matrix size {n} != pattern n {pattern.n}")
    if n > ENUM_CAP:
        raise SizeCapError(f"enumeration capped at n={ENUM_CAP}, got {n}")
    G = np.abs(C.T @ C)
    b, k = pattern.b, pattern.k
    best = 0.0

    def visit(last: int, size: int, total: float, chosen: list[int]) -> None:
        nonlocal best
        best = max(best, total)
        if size == k:
            return
        hi = min(n, last + 2 * b) if (prune and last >= 0) else n
        lo = 0 if last < 0 else last + b
        if prune and last < 0:
            hi = min(n, b)
        for j in range(lo, hi):
            gain = G[j, j] + 2.0 * sum(G[i, j] for i in chosen)
            chosen.append(j)
            visit(j, size + 1, total + gain, chosen)
            chosen.pop()

    visit(-1, 0, 0.0, [])
    return math.sqrt(best)
