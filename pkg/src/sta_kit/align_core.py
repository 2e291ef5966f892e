"""Soft dynamic time warping.

The Bellman table ``r`` has shape (T1 + 1, T2 + 1) with ``r[0, 0] = 0`` and
``+inf`` on the rest of the first row and column. Cell ``r[i, j]`` holds the
smoothed cost of aligning the first ``i`` samples of ``x`` with the first ``j``
samples of ``y``::

    r[i, j] = delta[i - 1, j - 1] + softmin_beta(r[i-1, j-1], r[i-1, j], r[i, j-1])

``beta = 0`` runs a plain min-recursion (classic DTW). The backward pass
returns the expected alignment matrix ``E = d sdtw / d delta``.

The brute-force helpers enumerate every monotone path explicitly. They are
exponential in the series length and exist to serve as test oracles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterator, Sequence

import numba
import numpy as np

from .delannoy import delannoy
from .errors import CapacityError, DomainError, UnsupportedError

ENUMERATION_GUARD = 10**7

# Step order used by the enumeration: right, down, diagonal.
_STEPS = ((0, 1), (1, 0), (1, 1))


@dataclass(frozen=True)
class Alignment:
    """One monotone path from (1, 1) to (m, n), stored with 1-based indices."""

    m: int
    n: int
    path: tuple[tuple[int, int], ...]

    def matrix(self) -> np.ndarray:
        a = np.zeros((self.m, self.n), dtype=np.uint8)
        for i, j in self.path:
            a[i - 1, j - 1] = 1
        return a


@dataclass(frozen=True)
class SoftDtwResult:
    """Value of soft-DTW together with the Bellman table used to compute it."""

    value: float
    beta: float
    table: np.ndarray


def softmin(values: Sequence[float], beta: float) -> float:
    """Soft minimum ``-beta * log(sum(exp(-a / beta)))``; plain min when beta is 0.

    ``+inf`` entries are allowed and contribute nothing to the sum.
    """
    a = np.asarray(values, dtype=np.float64).ravel()
    if a.size == 0:
        raise DomainError("softmin of an empty set is undefined")
    if beta < 0 or math.isnan(beta):
        raise DomainError(f"beta must be nonnegative, got {beta}")
    if np.isnan(a).any():
        raise DomainError("softmin received NaN")
    lo = float(a.min())
    if beta == 0 or math.isinf(lo):
        return lo
    return lo - beta * math.log(float(np.exp(-(a - lo) / beta).sum()))


def _check_delta(delta) -> np.ndarray:
    d = np.asarray(delta, dtype=np.float64)
    if d.ndim != 2 or d.shape[0] < 1 or d.shape[1] < 1:
        raise DomainError(f"cost matrix must be 2-D and nonempty, got shape {d.shape}")
    if np.isnan(d).any():
        raise DomainError("cost matrix contains NaN")
    if not np.isfinite(d).all():
        raise DomainError("cost matrix contains infinite entries")
    return np.ascontiguousarray(d)


@numba.njit(cache=True)
def _softmin3(a, b, c, beta):
    lo = min(a, min(b, c))
    if lo == np.inf:
        return np.inf
    s = math.exp(-(a - lo) / beta) + math.exp(-(b - lo) / beta) + math.exp(-(c - lo) / beta)
    return lo - beta * math.log(s)


@numba.njit(cache=True)
def _forward_soft(delta, beta):
    m, n = delta.shape
    r = np.full((m + 1, n + 1), np.inf)
    r[0, 0] = 0.0
    for i in range(1, m + 1):
        for j in range(1, n + 1):
            r[i, j] = delta[i - 1, j - 1] + _softmin3(r[i - 1, j - 1], r[i - 1, j], r[i, j - 1], beta)
    return r


@numba.njit(cache=True)
def _forward_hard(delta):
    m, n = delta.shape
    r = np.full((m + 1, n + 1), np.inf)
    r[0, 0] = 0.0
    for i in range(1, m + 1):
        for j in range(1, n + 1):
            r[i, j] = delta[i - 1, j - 1] + min(r[i - 1, j - 1], min(r[i - 1, j], r[i, j - 1]))
    return r


@numba.njit(cache=True)
def _backward(delta, r, beta):
    m, n = delta.shape
    # e[i, j] for 1 <= i <= m, 1 <= j <= n; one padding row/column of zeros
    # stands for the out-of-table successors.
    e = np.zeros((m + 2, n + 2))
    e[m, n] = 1.0
    for i in range(m, 0, -1):
        for j in range(n, 0, -1):
            if i == m and j == n:
                continue
            acc = 0.0
            if i < m:
                acc += e[i + 1, j] * math.exp((r[i + 1, j] - delta[i, j - 1] - r[i, j]) / beta)
            if j < n:
                acc += e[i, j + 1] * math.exp((r[i, j + 1] - delta[i - 1, j] - r[i, j]) / beta)
            if i < m and j < n:
                acc += e[i + 1, j + 1] * math.exp((r[i + 1, j + 1] - delta[i, j] - r[i, j]) / beta)
            e[i, j] = acc
    return e[1 : m + 1, 1 : n + 1].copy()


def sdtw_forward(delta, beta: float) -> SoftDtwResult:
    """Run the forward Bellman recursion on a cost matrix.

    Args:
        delta: (T1, T2) array of finite pairwise costs.
        beta: smoothing parameter, ``>= 0``.

    Returns:
        SoftDtwResult with ``value = r[T1, T2]`` and the full table.
    """
    d = _check_delta(delta)
    if beta < 0 or math.isnan(beta):
        raise DomainError(f"beta must be nonnegative, got {beta}")
    beta = float(beta)
    table = _forward_hard(d) if beta == 0 else _forward_soft(d, beta)
    return SoftDtwResult(value=float(table[-1, -1]), beta=beta, table=table)


def sdtw(delta, beta: float) -> float:
    return sdtw_forward(delta, beta).value


def sdtw_backward(result: SoftDtwResult, delta) -> np.ndarray:
    """Expected alignment matrix, i.e. the gradient of soft-DTW w.r.t. ``delta``.

    Raises:
        UnsupportedError: if the forward pass ran with ``beta = 0``.
    """
    d = _check_delta(delta)
    if result.beta == 0:
        raise UnsupportedError("soft-DTW gradient is undefined at beta = 0")
    if result.table.shape != (d.shape[0] + 1, d.shape[1] + 1):
        raise DomainError("Bellman table does not match the cost matrix shape")
    return _backward(d, result.table, result.beta)


def sdtw_value_and_grad(delta, beta: float) -> tuple[float, np.ndarray]:
    res = sdtw_forward(delta, beta)
    return res.value, sdtw_backward(res, delta)


# ---------------------------------------------------------------------------
# Brute-force oracles
# ---------------------------------------------------------------------------


def _guard(m: int, n: int) -> None:
    if m < 1 or n < 1:
        raise DomainError(f"alignment lattice needs m, n >= 1, got ({m}, {n})")
    count = delannoy(m, n)
    if count > ENUMERATION_GUARD:
        raise CapacityError(f"D_{{{m},{n}}} = {count} exceeds the enumeration guard {ENUMERATION_GUARD}")


def iter_paths(m: int, n: int) -> Iterator[tuple[tuple[int, int], ...]]:
    """Yield every path from (1, 1) to (m, n) in lexicographic step order."""
    _guard(m, n)
    path = [(1, 1)]

    def rec() -> Iterator[tuple[tuple[int, int], ...]]:
        i, j = path[-1]
        if i == m and j == n:
            yield tuple(path)
            return
        for di, dj in _STEPS:
            if i + di <= m and j + dj <= n:
                path.append((i + di, j + dj))
                yield from rec()
                path.pop()

    yield from rec()


def enumerate_alignments(m: int, n: int) -> list[Alignment]:
    return [Alignment(m, n, p) for p in iter_paths(m, n)]


@lru_cache(maxsize=64)
def path_cells(m: int, n: int) -> np.ndarray:
    """Flat cell indices of every path, shape (D_{m,n}, m + n - 1).

    Shorter paths are padded with the index ``m * n``, which callers map to a
    zero cost.
    """
    paths = list(iter_paths(m, n))
    out = np.full((len(paths), m + n - 1), m * n, dtype=np.int32)
    for row, p in enumerate(paths):
        out[row, : len(p)] = [(i - 1) * n + (j - 1) for i, j in p]
    out.setflags(write=False)
    return out


def alignment_costs(delta) -> np.ndarray:
    """Cost <A, delta> of every alignment A, in enumeration order."""
    d = _check_delta(delta)
    flat = np.append(d.ravel(), 0.0)
    return flat[path_cells(*d.shape)].sum(axis=1)


def sdtw_bruteforce(delta, beta: float) -> float:
    """Softmin over the costs of all enumerated alignments."""
    return softmin(alignment_costs(delta), beta)
