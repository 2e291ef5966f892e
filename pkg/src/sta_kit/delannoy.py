"""Delannoy numbers and the temporal-shift bound machinery.

Indexing is shifted so that ``D(1, n) = D(m, 1) = 1``: ``D(m, n)`` counts the
monotone (right, down, diagonal) paths from (1, 1) to (m, n), i.e. the number
of alignments between series of lengths m and n.

Every inequality involving ``c = 1 + sqrt(2)`` is decided exactly with
:class:`QSqrt2`, numbers of the form ``a + b*sqrt(2)`` with rational a, b.
Several of these inequalities are tight, so float comparisons are not
trustworthy there.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from fractions import Fraction
from typing import NamedTuple, Union

from .errors import DomainError

Rational = Union[int, Fraction]


class QSqrt2:
    """Exact element ``a + b*sqrt(2)`` of the field Q(sqrt 2)."""

    __slots__ = ("a", "b")

    def __init__(self, a: Rational = 0, b: Rational = 0):
        self.a = Fraction(a)
        self.b = Fraction(b)

    @staticmethod
    def _lift(x) -> "QSqrt2":
        return x if isinstance(x, QSqrt2) else QSqrt2(x)

    def __add__(self, other):
        o = self._lift(other)
        return QSqrt2(self.a + o.a, self.b + o.b)

    __radd__ = __add__

    def __neg__(self):
        return QSqrt2(-self.a, -self.b)

    def __sub__(self, other):
        return self + (-self._lift(other))

    def __rsub__(self, other):
        return self._lift(other) - self

    def __mul__(self, other):
        o = self._lift(other)
        return QSqrt2(self.a * o.a + 2 * self.b * o.b, self.a * o.b + self.b * o.a)

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = self._lift(other)
        norm = o.a * o.a - 2 * o.b * o.b
        if norm == 0:
            raise ZeroDivisionError("division by zero in Q(sqrt 2)")
        conj = QSqrt2(o.a / norm, -o.b / norm)
        return self * conj

    def __rtruediv__(self, other):
        return self._lift(other) / self

    def sign(self) -> int:
        a, b = self.a, self.b
        sa = (a > 0) - (a < 0)
        sb = (b > 0) - (b < 0)
        if sb == 0:
            return sa
        if sa == 0 or sa == sb:
            return sb
        # opposite signs: compare a^2 with 2 b^2 (never equal, sqrt 2 is irrational)
        return sa if a * a > 2 * b * b else sb

    def __eq__(self, other):
        if not isinstance(other, (QSqrt2, int, Fraction)):
            return NotImplemented
        return (self - other).sign() == 0

    def __hash__(self):
        return hash((self.a, self.b))

    def __lt__(self, other):
        return (self - other).sign() < 0

    def __le__(self, other):
        return (self - other).sign() <= 0

    def __gt__(self, other):
        return (self - other).sign() > 0

    def __ge__(self, other):
        return (self - other).sign() >= 0

    def __float__(self):
        a, b = self.a, self.b
        if a != 0 and b != 0 and (a > 0) != (b > 0):
            # avoid cancellation: a + b r = (a^2 - 2 b^2) / (a - b r)
            return float(a * a - 2 * b * b) / (float(a) - float(b) * math.sqrt(2.0))
        return float(a) + float(b) * math.sqrt(2.0)

    def __repr__(self):
        return f"QSqrt2({self.a}, {self.b})"


SQRT2 = QSqrt2(0, 1)
C = 1 + SQRT2
# 1 - 1/c = 2 - sqrt(2)
A_COEF = 1 - 1 / C


# ---------------------------------------------------------------------------
# Delannoy numbers
# ---------------------------------------------------------------------------

_lock = threading.Lock()
_rows: list[list[int]] = [[1]]  # _rows[i][j] = D(i + 1, j + 1)


def _ensure(size: int) -> None:
    if len(_rows) >= size:
        return
    with _lock:
        old = len(_rows)
        if old >= size:
            return
        new = max(size, 2 * old)
        grown = [[0] * new for _ in range(new)]
        for i in range(new):
            for j in range(new):
                if i == 0 or j == 0:
                    grown[i][j] = 1
                elif i < old and j < old:
                    grown[i][j] = _rows[i][j]
                else:
                    grown[i][j] = grown[i - 1][j] + grown[i][j - 1] + grown[i - 1][j - 1]
        _rows[:] = grown


def delannoy(m: int, n: int) -> int:
    """Exact D(m, n) for m, n >= 1."""
    if m < 1 or n < 1:
        raise DomainError(f"Delannoy numbers are indexed from 1, got ({m}, {n})")
    _ensure(max(m, n))
    return _rows[m - 1][n - 1]


def central(m: int) -> int:
    return delannoy(m, m)


@dataclass(frozen=True)
class DelannoyTable:
    max_m: int
    max_n: int
    counts: tuple[tuple[int, ...], ...]

    def __getitem__(self, mn: tuple[int, int]) -> int:
        m, n = mn
        return self.counts[m - 1][n - 1]


def delannoy_table(max_m: int, max_n: int) -> DelannoyTable:
    if max_m < 1 or max_n < 1:
        raise DomainError("table bounds must be >= 1")
    _ensure(max(max_m, max_n))
    counts = tuple(tuple(_rows[i][:max_n]) for i in range(max_m))
    return DelannoyTable(max_m, max_n, counts)


def log_int(n: int) -> float:
    """Natural log of a positive integer of any size."""
    if n <= 0:
        raise DomainError("log of a nonpositive integer")
    shift = max(n.bit_length() - 64, 0)
    return math.log(n >> shift) + shift * math.log(2.0)


def central_delannoy_recursion_check(m_max: int) -> bool:
    """``m D_{m+1} = (6m - 3) D_m - (m - 1) D_{m-1}`` for every 2 <= m <= m_max."""
    if m_max < 2:
        raise DomainError("m_max must be >= 2")
    return all(
        m * central(m + 1) == (6 * m - 3) * central(m) - (m - 1) * central(m - 1)
        for m in range(2, m_max + 1)
    )


def growth_check(m_max: int) -> bool:
    """``D_{m+1} <= c^2 D_m`` for 1 <= m <= m_max."""
    if m_max < 1:
        raise DomainError("m_max must be >= 1")
    c2 = C * C
    return all(central(m + 1) <= c2 * central(m) for m in range(1, m_max + 1))


# ---------------------------------------------------------------------------
# Off-diagonal factors
# ---------------------------------------------------------------------------


def phi_exact(m: int, k: int) -> QSqrt2:
    _check_mk(m, k)
    return 1 - (A_COEF * (k - 1) + 1 / C) / (m + k - 1)


def psi_exact(m: int, k: int) -> QSqrt2:
    _check_mk(m, k)
    return 1 + A_COEF * (k - 1) / m


def phi(m: int, k: int) -> float:
    return float(phi_exact(m, k))


def psi(m: int, k: int) -> float:
    return float(psi_exact(m, k))


def _check_mk(m: int, k: int) -> None:
    if m < 1 or k < 1:
        raise DomainError(f"m and k must be >= 1, got ({m}, {k})")


def _rel_slack(lhs: QSqrt2, rhs: QSqrt2) -> float:
    """``(rhs - lhs) / rhs`` as a float; nonnegative iff ``lhs <= rhs``."""
    return float((rhs - lhs) / rhs)


@dataclass(frozen=True)
class SweepRow:
    m: int
    k: int
    d_m_mk: int
    phi: float
    psi: float
    slack_a: float
    slack_b: float
    slack_lemma: float
    ok_a: bool
    ok_b: bool
    ok_lemma: bool

    @property
    def ok(self) -> bool:
        return self.ok_a and self.ok_b and self.ok_lemma


def inequality_a(m: int, k: int) -> tuple[QSqrt2, QSqrt2]:
    """Both sides of ``D(m, m+k) <= c Phi(m, k) D(m, m+k-1)``."""
    return QSqrt2(delannoy(m, m + k)), C * phi_exact(m, k) * delannoy(m, m + k - 1)


def inequality_b(m: int, k: int) -> tuple[QSqrt2, QSqrt2]:
    """Both sides of ``c Psi(m, k) D(m, m+k) <= D(m+1, m+k)``."""
    return C * psi_exact(m, k) * delannoy(m, m + k), QSqrt2(delannoy(m + 1, m + k))


def technical_lemma_terms(m: int, k: int) -> tuple[QSqrt2, QSqrt2, QSqrt2]:
    """Left, middle and right members of the Phi/Psi chain at (m, k)."""
    left = C * psi_exact(m, k + 1) * phi_exact(m, k + 1)
    middle = 1 / C + psi_exact(m, k) + phi_exact(m, k + 1)
    right = C * phi_exact(m + 1, k) * psi_exact(m, k)
    return left, middle, right


def sweep_row(m: int, k: int) -> SweepRow:
    la, ra = inequality_a(m, k)
    lb, rb = inequality_b(m, k)
    left, middle, right = technical_lemma_terms(m, k)
    return SweepRow(
        m=m,
        k=k,
        d_m_mk=delannoy(m, m + k),
        phi=phi(m, k),
        psi=psi(m, k),
        slack_a=_rel_slack(la, ra),
        slack_b=_rel_slack(lb, rb),
        slack_lemma=min(_rel_slack(left, middle), _rel_slack(middle, right)),
        ok_a=la <= ra,
        ok_b=lb <= rb,
        ok_lemma=left <= middle <= right,
    )


def sweep(m_max: int, k_max: int) -> list[SweepRow]:
    if m_max < 1 or k_max < 1:
        raise DomainError("sweep bounds must be >= 1")
    return [sweep_row(m, k) for m in range(1, m_max + 1) for k in range(1, k_max + 1)]


def offdiagonal_inequality_check(m_max: int, k_max: int) -> bool:
    if m_max < 1 or k_max < 1:
        raise DomainError("sweep bounds must be >= 1")
    for m in range(1, m_max + 1):
        for k in range(1, k_max + 1):
            la, ra = inequality_a(m, k)
            lb, rb = inequality_b(m, k)
            if not (la <= ra and lb <= rb):
                return False
    return True


def technical_lemma_check(m_max: int, k_max: int) -> bool:
    if m_max < 1 or k_max < 1:
        raise DomainError("sweep bounds must be >= 1")
    for m in range(1, m_max + 1):
        for k in range(1, k_max + 1):
            left, middle, right = technical_lemma_terms(m, k)
            if not left <= middle <= right:
                return False
    return True


# ---------------------------------------------------------------------------
# Shift bounds
# ---------------------------------------------------------------------------


class LogRatio(NamedTuple):
    log_ratio: float
    product_bound: float


def _check_shift(m: int, m_prime: int, k: int) -> None:
    if m < 1 or m_prime < 1:
        raise DomainError(f"m and m' must be >= 1, got ({m}, {m_prime})")
    if k < 0 or k > m_prime - 1:
        raise DomainError(f"shift k={k} infeasible: need 0 <= k <= m' - 1 = {m_prime - 1}")


def log_ratio_bound(m: int, m_prime: int, k: int) -> LogRatio:
    """Zero-cost path-count log ratio and its Phi/Psi product lower bound.

    ``log_ratio = log(D(m,m) D(m',m') / (D(m+k,m) D(m'-k,m')))`` and
    ``product_bound = sum_{i<=k} log Psi(m'-i, i) - log Phi(m, i)``.
    """
    _check_shift(m, m_prime, k)
    num = central(m) * central(m_prime)
    den = delannoy(m + k, m) * delannoy(m_prime - k, m_prime)
    bound = math.fsum(math.log(psi(m_prime - i, i)) - math.log(phi(m, i)) for i in range(1, k + 1))
    return LogRatio(log_int(num) - log_int(den), bound)


def product_bound_check(m: int, m_prime: int, k: int) -> bool:
    """Exact version of ``log_ratio >= product_bound`` (no logs, no floats)."""
    _check_shift(m, m_prime, k)
    prod = QSqrt2(1)
    for i in range(1, k + 1):
        prod = prod * psi_exact(m_prime - i, i) / phi_exact(m, i)
    num = central(m) * central(m_prime)
    den = delannoy(m + k, m) * delannoy(m_prime - k, m_prime)
    return prod * den <= num


def alpha(m: int, m_prime: int) -> float:
    return (2 - math.sqrt(2)) / 2 * (1 / m_prime + 1 / (m + m_prime))


def rho(T: int) -> float:
    return (3 * math.sqrt(2) - 4) / (3 * T)


def quadratic_bound(beta: float, m: int, m_prime: int, T: int, k: int) -> float:
    """``beta * alpha * k (k - 1) + beta * rho * k``."""
    if beta <= 0:
        raise DomainError("beta must be > 0")
    if m < 1 or m_prime < 1 or T < 2:
        raise DomainError("need m, m' >= 1 and T >= 2")
    return beta * alpha(m, m_prime) * k * (k - 1) + beta * rho(T) * k


def beta_threshold(mu: float, T: int) -> float:
    """Largest smoothing for which the shift theorem applies: ``mu / log(3 T D(T, T))``."""
    if not mu > 0 or not math.isfinite(mu):
        raise DomainError("mu must be a positive finite number (is the series constant?)")
    if T < 2:
        raise DomainError("T must be >= 2")
    return mu / (math.log(3 * T) + log_int(central(T)))


@dataclass(frozen=True)
class BoundTerms:
    c: float
    alpha: float
    rho: float
    mu: float | None
    beta_max: float | None


def bound_terms(m: int, m_prime: int, T: int, mu: float | None = None) -> BoundTerms:
    beta_max = beta_threshold(mu, T) if mu is not None else None
    return BoundTerms(float(C), alpha(m, m_prime), rho(T), mu, beta_max)
