"""Exact rational versions of the series routines, for small-n oracles.

Everything here works on lists of :class:`fractions.Fraction` and is
quadratic in pure Python, so keep n <= 64.
"""

from __future__ import annotations

from fractions import Fraction
from typing import Sequence

from .exceptions import PreconditionError, SingularSeriesError

EXACT_CAP = 64


def _check(n: int) -> None:
    if not 1 <= n <= EXACT_CAP:
        raise PreconditionError(f"exact mode supports 1 <= n <= {EXACT_CAP}, got {n}")


def multiply(a: Sequence, b: Sequence) -> list[Fraction]:
    if len(a) != len(b):
        raise PreconditionError("length mismatch")
    a = [Fraction(x) for x in a]
    b = [Fraction(x) for x in b]
    return [sum((a[j] * b[i - j] for j in range(i + 1)), Fraction(0)) for i in range(len(a))]


def invert(a: Sequence) -> list[Fraction]:
    a = [Fraction(x) for x in a]
    if a[0] == 0:
        raise SingularSeriesError("leading coefficient is zero")
    out = [1 / a[0]]
    for i in range(1, len(a)):
        s = sum((a[j] * out[i - j] for j in range(1, i + 1)), Fraction(0))
        out.append(-s / a[0])
    return out


def gregory(m: int) -> list[Fraction]:
    _check(m)
    g = [Fraction(1)]
    for i in range(1, m):
        g.append(sum((g[j] * Fraction(-1, i + 1 - j) for j in range(i)), Fraction(0)))
    return g


def dtoep(n: int) -> list[Fraction]:
    _check(n)
    return [Fraction(1, j + 1) for j in range(n)]


def sqrt_prefix(n: int) -> list[Fraction]:
    _check(n)
    r = [Fraction(1)]
    for j in range(1, n):
        r.append(r[-1] * Fraction(2 * j - 1, 2 * j))
    return r


def prefix_sums(a: Sequence) -> list[Fraction]:
    out, acc = [], Fraction(0)
    for x in a:
        acc += Fraction(x)
        out.append(acc)
    return out


def banded_inverse(a: Sequence, p: int, n: int | None = None) -> list[Fraction]:
    n = len(a) if n is None else n
    head = invert(list(a)[:p])
    return invert(head + [Fraction(0)] * (n - p))
