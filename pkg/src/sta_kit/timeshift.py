"""Temporal shifts of univariate series and the soft-DTW shift gap.

Indices follow the 1-based convention of the shift theory: ``onset`` is the
first ``i`` in ``[1, T-1]`` with ``x[i+1] != x[i]`` and ``offset`` the last one.
A k-shift pads ``k`` copies of ``x[1]`` on the left and drops the last ``k``
samples, which keeps the series length.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from . import align_core
from .delannoy import beta_threshold, delannoy, log_ratio_bound, quadratic_bound
from .errors import DomainError

EXPERIMENT_HEADER = ("beta", "k", "gap", "log_ratio_bound", "quadratic_bound")


@dataclass(frozen=True)
class ShiftProfile:
    T: int
    onset: int
    offset: int

    @property
    def m(self) -> int:
        return self.onset

    @property
    def m_prime(self) -> int:
        return self.T - self.offset

    @property
    def fluctuation(self) -> range:
        return range(self.onset, self.offset + 1)

    @property
    def max_shift(self) -> int:
        """Largest k with ``offset + k <= T - 1``."""
        return self.T - 1 - self.offset


@dataclass(frozen=True)
class ZeroCostCensus:
    costs: tuple[float, ...]
    counts: tuple[int, ...]

    @property
    def n0(self) -> int:
        return self.counts[0]

    @property
    def total(self) -> int:
        return sum(self.counts)


def _as_series(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 1:
        raise DomainError("expected a univariate series")
    if not np.isfinite(a).all():
        raise DomainError("series contains non-finite values")
    return a


def _changes(x: np.ndarray, tolerance: float) -> np.ndarray:
    """1-based indices i in [1, T-1] with x[i+1] != x[i]."""
    diff = np.abs(np.diff(x))
    hits = diff > tolerance if tolerance > 0 else diff != 0
    return np.flatnonzero(hits) + 1


def profile(x, tolerance: float = 0.0) -> ShiftProfile:
    a = _as_series(x)
    if a.size < 2:
        raise DomainError("series must have length >= 2")
    ch = _changes(a, tolerance)
    if ch.size == 0:
        raise DomainError("constant series has no onset")
    return ShiftProfile(T=a.size, onset=int(ch[0]), offset=int(ch[-1]))


def make_kshift(x, k: int) -> np.ndarray:
    a = _as_series(x)
    if k < 0:
        raise DomainError("shift must be nonnegative")
    if k == 0:
        return a.copy()
    prof = profile(a)
    if prof.offset + k > prof.T - 1:
        raise DomainError(f"shift k={k} infeasible: the largest feasible shift is {prof.max_shift}")
    return np.concatenate([np.full(k, a[0]), a[: a.size - k]])


def kshift_violations(x, y, k: int, tolerance: float = 0.0, literal: bool = False) -> list[str]:
    """Clauses of the k-shift definition that fail for the pair (x, y).

    By default the tail clause compares indices strictly after the offsets and
    the fluctuation clause compares ``x[i]`` with ``y[i + k]``. With
    ``literal=True`` the tail clause starts at the offsets themselves and the
    fluctuation clause takes both signs of ``i - j``; read that way the tail
    clause fails for every non-constant series, since ``x[off] != x[off + 1]``.
    """
    a, b = _as_series(x), _as_series(y)
    if a.size != b.size:
        return ["length mismatch"]
    try:
        px, py = profile(a, tolerance), profile(b, tolerance)
    except DomainError as exc:
        return [str(exc)]

    def eq(u: float, v: float) -> bool:
        return abs(u - v) <= tolerance

    bad = []
    if py.onset != px.onset + k:
        bad.append("onset")
    if py.offset != px.offset + k:
        bad.append("offset")
    T = a.size
    if not all(eq(a[i - 1], b[j - 1]) for i in range(1, px.onset + 1) for j in range(1, py.onset + 1)):
        bad.append("head")
    t0 = 0 if literal else 1
    if not all(
        eq(a[i - 1], b[j - 1]) for i in range(px.offset + t0, T + 1) for j in range(py.offset + t0, T + 1)
    ):
        bad.append("tail")
    fy = set(py.fluctuation)
    lags = (k, -k) if literal else (k,)
    if any(
        i + d in fy and not eq(a[i - 1], b[i + d - 1]) for i in px.fluctuation for d in lags
    ):
        bad.append("fluctuation")
    return bad


def verify_kshift(x, y, k: int, tolerance: float = 0.0, literal: bool = False) -> bool:
    return not kshift_violations(x, y, k, tolerance, literal)


def sq_cost(x, y) -> np.ndarray:
    """Squared-difference cost matrix between two scalar series."""
    a, b = _as_series(x), _as_series(y)
    return (a[:, None] - b[None, :]) ** 2


def min_positive_cost(x, tolerance: float = 1e-12) -> float:
    """Smallest entry of Delta(x, x) above ``tolerance``."""
    d = sq_cost(x, x)
    pos = d[d > tolerance]
    if pos.size == 0:
        raise DomainError("Delta(x, x) has no positive entry (constant series)")
    return float(pos.min())


def census(x, y, delta_fn: Callable[[np.ndarray, np.ndarray], np.ndarray] = sq_cost, tol: float = 1e-12) -> ZeroCostCensus:
    """Distinct alignment costs and how many alignments reach each, by enumeration."""
    d = np.asarray(delta_fn(_as_series(x), _as_series(y)), dtype=np.float64)
    costs = np.sort(align_core.alignment_costs(d))
    values: list[float] = []
    counts: list[int] = []
    start = 0
    for idx in range(1, costs.size + 1):
        if idx == costs.size or costs[idx] - costs[start] > tol:
            values.append(float(costs[start]))
            counts.append(idx - start)
            start = idx
    return ZeroCostCensus(tuple(values), tuple(counts))


def zero_cost_ratio(m: int, m_prime: int, k: int):
    """Predicted ``n0(x, x) / n0(x, x_{+k})`` as an exact fraction."""

    return Fraction(delannoy(m, m) * delannoy(m_prime, m_prime), delannoy(m, m + k) * delannoy(m_prime, m_prime - k))


@dataclass(frozen=True)
class ShiftRow:
    beta: float
    k: int
    gap: float
    log_ratio_bound: float
    quadratic_bound: float

    def astuple(self) -> tuple:
        return (self.beta, self.k, self.gap, self.log_ratio_bound, self.quadratic_bound)


def shift_gap_experiment(x, betas: Sequence[float], k_max: int) -> list[ShiftRow]:
    """Measured soft-DTW shift gap against the log-ratio and quadratic bounds.

    Rows are ordered by (beta as given, k ascending) and include ``k = 0``.
    The log-ratio column is ``beta * log_ratio - beta / (3T)``.
    """
    a = _as_series(x)
    prof = profile(a)
    if k_max < 0 or k_max > prof.max_shift:
        raise DomainError(f"k_max={k_max} infeasible: the largest feasible shift is {prof.max_shift}")
    rows = []
    shifted = [make_kshift(a, k) for k in range(k_max + 1)]
    costs = [sq_cost(a, s) for s in shifted]
    for beta in betas:
        if beta < 0:
            raise DomainError("beta must be nonnegative")
        base = align_core.sdtw(costs[0], beta)
        for k in range(k_max + 1):
            if k == 0:
                rows.append(ShiftRow(beta, 0, 0.0, 0.0, 0.0))
                continue
            gap = align_core.sdtw(costs[k], beta) - base
            if beta > 0:
                lr = beta * log_ratio_bound(prof.m, prof.m_prime, k).log_ratio - beta / (3 * prof.T)
                qb = quadratic_bound(beta, prof.m, prof.m_prime, prof.T, k)
            else:
                lr = qb = 0.0
            rows.append(ShiftRow(beta, k, gap, lr, qb))
    return rows


def theorem_beta(x) -> float:
    """``beta_threshold`` evaluated on the self-cost matrix of ``x``."""
    a = _as_series(x)
    return beta_threshold(min_positive_cost(a), a.size)


def pulse(T: int, start: int, values: Sequence[float], baseline: float = 0.0) -> np.ndarray:
    """Constant series with ``values`` written from 1-based index ``start``."""
    if start < 1 or start + len(values) - 1 > T:
        raise DomainError("pulse does not fit in the series")
    x = np.full(T, float(baseline))
    x[start - 1 : start - 1 + len(values)] = values
    return x


def centered_pulse(T: int, width: int, amplitude: float = 1.0) -> np.ndarray:
    """Smooth bump (half-sine) of the given width centered in a zero series."""
    if width < 1 or width > T - 2:
        raise DomainError("pulse width must be in [1, T - 2]")
    start = (T - width) // 2 + 1
    shape = amplitude * np.sin(np.pi * np.arange(1, width + 1) / (width + 1))
    return pulse(T, start, shape)
