"""Spatio-temporal alignment: soft-DTW over a matrix of Sinkhorn divergences.

Every frame of every series is first reduced to a table of distinct frames. The
symmetric scalings of each distinct frame are solved once, then the divergence
of each unordered pair of distinct frames is solved once in fixed-size batches.
Frame pairs that are bit-identical get ``S = 0`` without a solve. Because batch
boundaries do not depend on the worker count, results are bit-identical for any
number of threads.
"""

from __future__ import annotations

import logging
import math
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import align_core, uot
from .errors import ConvergenceWarning, DomainError, UnsupportedError

logger = logging.getLogger(__name__)

DEFAULT_BETA = 0.1
CHUNK = 512
SIGNED_MODES = ("absolute", "split-average")


@dataclass
class SpatioTemporalSeries:
    """A (T, p) array of intensities on the bins of a geometry."""

    data: np.ndarray
    geometry: uot.GroundGeometry | None = None
    label: str | None = None
    signed: bool = False

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64)
        if d.ndim == 1:
            d = d[:, None]
        if d.ndim != 2 or d.shape[0] < 1 or d.shape[1] < 1:
            raise DomainError(f"series must be a nonempty (T, p) array, got shape {d.shape}")
        if not np.isfinite(d).all():
            raise DomainError("series contains non-finite values")
        if not self.signed and (d < 0).any():
            raise DomainError("series has negative entries (use a signed mode)")
        if self.geometry is not None and self.geometry.p != d.shape[1]:
            raise DomainError(f"series has p={d.shape[1]} but geometry has p={self.geometry.p}")
        self.data = d

    @property
    def T(self) -> int:
        return self.data.shape[0]

    @property
    def p(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class CostProvider:
    """How the frame-to-frame cost matrix is built.

    Use the constructors :meth:`sqeuclidean`, :meth:`sinkhorn` and
    :meth:`precomputed`.
    """

    kind: str
    kernel: uot.GibbsKernel | None = None
    params: uot.UotParams | None = None
    matrix: np.ndarray | None = None
    fast: bool = True

    @classmethod
    def sqeuclidean(cls) -> "CostProvider":
        return cls("sqeuclidean")

    @classmethod
    def sinkhorn(cls, kernel: uot.GibbsKernel, params: uot.UotParams, fast: bool = True) -> "CostProvider":
        if not math.isclose(kernel.epsilon, params.epsilon, rel_tol=1e-12):
            raise DomainError("kernel and params disagree on epsilon")
        return cls("sinkhorn", kernel, params, fast=fast and kernel.separable)

    @classmethod
    def precomputed(cls, matrix) -> "CostProvider":
        return cls("precomputed", matrix=np.asarray(matrix, dtype=np.float64))


@dataclass
class CostMatrix:
    values: np.ndarray
    converged: np.ndarray


@dataclass
class DissimilarityMatrix:
    values: np.ndarray
    labels: list[str]
    metadata: dict = field(default_factory=dict)


def _as_data(x, signed: bool = False) -> np.ndarray:
    if isinstance(x, SpatioTemporalSeries):
        return x.data
    return SpatioTemporalSeries(x, signed=signed).data


# ---------------------------------------------------------------------------
# Frame table: distinct frames, their self-scalings and pairwise divergences
# ---------------------------------------------------------------------------


class FrameTable:
    """Sinkhorn divergences between the distinct rows of a frame array."""

    def __init__(self, frames: np.ndarray, cost: CostProvider, n_jobs: int = 1, chunk: int = CHUNK):
        if cost.kind != "sinkhorn":
            raise DomainError("FrameTable needs a sinkhorn cost provider")
        self.cost = cost
        self.kernel, self.params = cost.kernel, cost.params
        if frames.shape[1] != self.kernel.p:
            raise DomainError(f"frames have p={frames.shape[1]}, kernel has p={self.kernel.p}")
        self.frames, self.inverse = np.unique(frames, axis=0, return_inverse=True)
        self.inverse = self.inverse.ravel()
        self.n_jobs = max(1, int(n_jobs))
        self.chunk = chunk
        self.stats = {"cross_solves": 0, "self_solves": 0, "max_iterations": 0, "unconverged": 0, "inconsistent": 0}
        self._self_pass()

    @property
    def n_unique(self) -> int:
        return self.frames.shape[0]

    def _self_pass(self) -> None:
        U = self.n_unique
        self.mass_self = np.empty(U)
        self.w_self = np.empty(U)
        self.log_c = np.empty((self.kernel.p, U))
        conv = np.empty(U, dtype=bool)
        for s in range(0, U, self.chunk):
            X = self.frames[s : s + self.chunk].T
            res = uot.solve_symmetric(X, self.kernel, self.params, self.cost.fast)
            self.mass_self[s : s + self.chunk] = res.mass
            self.w_self[s : s + self.chunk] = uot.dual_value(X, X, res, self.kernel, self.params)
            self.log_c[:, s : s + self.chunk] = res.log_a
            conv[s : s + self.chunk] = res.converged
            self.stats["max_iterations"] = max(self.stats["max_iterations"], int(res.iterations.max(initial=0)))
        self.self_converged = conv
        self.stats["self_solves"] = U
        self.stats["unconverged"] += int((~conv).sum())

    def _solve_chunk(self, iu: np.ndarray, iv: np.ndarray):
        X, Y = self.frames[iu].T, self.frames[iv].T
        res = uot.solve_pairs(X, Y, self.kernel, self.params, self.cost.fast)
        s_mass = uot.s_from_masses(res.mass, self.mass_self[iu], self.mass_self[iv], self.params)
        w_xy = uot.dual_value(X, Y, res, self.kernel, self.params)
        s_dual = w_xy - 0.5 * (self.w_self[iu] + self.w_self[iv])
        scale = np.maximum.reduce([np.abs(w_xy), np.abs(self.w_self[iu]), np.abs(self.w_self[iv]), np.ones_like(w_xy)])
        consistent = np.abs(s_mass - s_dual) <= 1e-6 * scale
        return s_mass, res.converged & self.self_converged[iu] & self.self_converged[iv], consistent, res

    def pair_values(self, iu: np.ndarray, iv: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Divergences for index pairs with ``iu < iv``; returns (values, converged).

        Pairs whose two S routes disagree get NaN.
        """
        n = iu.size
        out = np.empty(n)
        conv = np.empty(n, dtype=bool)
        starts = range(0, n, self.chunk)

        def work(s):
            return s, self._solve_chunk(iu[s : s + self.chunk], iv[s : s + self.chunk])

        if self.n_jobs == 1 or n <= self.chunk:
            results = map(work, starts)
        else:
            pool = ThreadPoolExecutor(max_workers=self.n_jobs)
            results = pool.map(work, starts)
        for s, (vals, cv, ok, res) in results:
            e = s + vals.size
            ok = ok | ~cv
            out[s:e] = np.where(ok, vals, np.nan)
            conv[s:e] = cv
            self.stats["max_iterations"] = max(self.stats["max_iterations"], int(res.iterations.max(initial=0)))
            self.stats["inconsistent"] += int((~ok).sum())
        if self.n_jobs > 1 and n > self.chunk:
            pool.shutdown()
        self.stats["cross_solves"] += n
        self.stats["unconverged"] += int((~conv).sum())
        return out, conv

    def full_matrix(self) -> tuple[np.ndarray, np.ndarray]:
        """Symmetric (U, U) divergence table with zero diagonal."""
        U = self.n_unique
        iu, iv = np.triu_indices(U, 1)
        vals, conv = self.pair_values(iu, iv)
        S = np.zeros((U, U))
        C = np.ones((U, U), dtype=bool)
        S[iu, iv] = S[iv, iu] = vals
        C[iu, iv] = C[iv, iu] = conv
        return S, C

    def lookup(self, ru: np.ndarray, rv: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Divergences between distinct-frame indices ``ru`` (rows) and ``rv`` (columns)."""
        A, B = np.meshgrid(ru, rv, indexing="ij")
        lo, hi = np.minimum(A, B), np.maximum(A, B)
        off = lo != hi
        keys = np.unique(lo[off] * self.n_unique + hi[off])
        vals, conv = self.pair_values(keys // self.n_unique, keys % self.n_unique)
        S = np.zeros(A.shape)
        C = np.ones(A.shape, dtype=bool)
        pos = np.searchsorted(keys, lo[off] * self.n_unique + hi[off])
        S[off], C[off] = vals[pos], conv[pos]
        return S, C


def _sq_frames(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    d = (x * x).sum(1)[:, None] + (y * y).sum(1)[None, :] - 2.0 * x @ y.T
    return np.maximum(d, 0.0)


def _warn_flags(conv: np.ndarray, what: str) -> None:
    bad = int((~conv).sum())
    if bad:
        warnings.warn(f"{what}: {bad} Sinkhorn solve(s) did not converge", ConvergenceWarning, stacklevel=3)


def s_cost_matrix(x, y, cost: CostProvider, n_jobs: int = 1) -> CostMatrix:
    """T1 x T2 matrix of frame-to-frame costs between two series.

    For the sinkhorn provider the self-scalings of each distinct frame of x and y
    are solved once and reused for every entry. Non-converged entries keep their
    value, are flagged in ``converged`` and raise a ConvergenceWarning.
    """
    a, b = _as_data(x), _as_data(y)
    if a.shape[1] != b.shape[1]:
        raise DomainError("series disagree on p")
    if cost.kind == "precomputed":
        m = cost.matrix
        if m.shape != (a.shape[0], b.shape[0]):
            raise DomainError(f"precomputed cost has shape {m.shape}, expected {(a.shape[0], b.shape[0])}")
        return CostMatrix(m.copy(), np.ones(m.shape, dtype=bool))
    if cost.kind == "sqeuclidean":
        d = _sq_frames(a, b)
        return CostMatrix(d, np.ones(d.shape, dtype=bool))
    table = FrameTable(np.vstack([a, b]), cost, n_jobs)
    S, C = table.lookup(table.inverse[: a.shape[0]], table.inverse[a.shape[0] :])
    _warn_flags(C, "s_cost_matrix")
    return CostMatrix(S, C)


def split_signed(x, mode: str = "split-average") -> tuple[np.ndarray, ...]:
    """Nonnegative channels of a signed series.

    ``absolute`` gives ``(|x|,)``; ``split-average`` gives ``(x+, x-)``, whose
    costs are averaged by :func:`signed_cost_matrix`.
    """
    d = _as_data(x, signed=True)
    if mode == "absolute":
        return (np.abs(d),)
    if mode == "split-average":
        return (np.maximum(d, 0.0), np.maximum(-d, 0.0))
    raise DomainError(f"unknown signed mode {mode!r}; expected one of {SIGNED_MODES}")


def signed_cost_matrix(x, y, cost: CostProvider, mode: str = "split-average", n_jobs: int = 1) -> CostMatrix:
    cx, cy = split_signed(x, mode), split_signed(y, mode)
    parts = [s_cost_matrix(u, v, cost, n_jobs) for u, v in zip(cx, cy)]
    vals = sum(p.values for p in parts) / len(parts)
    conv = np.logical_and.reduce([p.converged for p in parts])
    return CostMatrix(vals, conv)


def _cost(x, y, cost: CostProvider, signed: str | None, n_jobs: int) -> CostMatrix:
    if signed is None:
        return s_cost_matrix(x, y, cost, n_jobs)
    return signed_cost_matrix(x, y, cost, signed, n_jobs)


def sta(x, y, beta: float = DEFAULT_BETA, cost: CostProvider | None = None, signed: str | None = None, n_jobs: int = 1) -> float:
    """Soft-DTW between two spatio-temporal series over their frame cost matrix."""
    cost = cost or CostProvider.sqeuclidean()
    return align_core.sdtw(_cost(x, y, cost, signed, n_jobs).values, beta)


def sta_gradient(x, y, beta: float = DEFAULT_BETA, cost: CostProvider | None = None) -> np.ndarray:
    """Gradient of ``sta(x, y)`` with respect to x, shape (T1, p).

    Chain rule through the expected alignment E:
    ``d sta / d x_i = sum_j E_ij grad_x S(x_i, y_j)`` with
    ``grad_x S(x_i, y_j) = gamma (c_i^r - a_ij^r)``, ``r = -eps / gamma``.
    """
    cost = cost or CostProvider.sqeuclidean()
    if beta <= 0:
        raise UnsupportedError("sta gradient needs beta > 0")
    a, b = _as_data(x), _as_data(y)
    cm = s_cost_matrix(a, b, cost)
    E = align_core.sdtw_value_and_grad(cm.values, beta)[1]
    if cost.kind == "sqeuclidean":
        return 2.0 * (E.sum(1)[:, None] * a - E @ b)
    if cost.kind != "sinkhorn":
        raise UnsupportedError("gradient needs a sinkhorn or sqeuclidean cost")
    if not (a > 0).all() or not (b > 0).all():
        raise DomainError("sta gradient needs strictly positive data")
    kernel, params = cost.kernel, cost.params
    r = -params.epsilon / params.gamma
    T1, T2 = E.shape
    sym = uot.solve_symmetric(a.T, kernel, params, cost.fast)
    ii, jj = np.divmod(np.arange(T1 * T2), T2)
    res = uot.solve_pairs(a[ii].T, b[jj].T, kernel, params, cost.fast)
    _warn_flags(np.concatenate([sym.converged, res.converged]), "sta_gradient")
    g = params.gamma * (np.exp(r * sym.log_a[:, ii]) - np.exp(r * res.log_a))
    # identical frames: the cross problem is the symmetric one, gradient 0
    g[:, (a[ii] == b[jj]).all(axis=1)] = 0.0
    return (g * E.ravel()[None, :]).reshape(-1, T1, T2).sum(axis=2).T


# ---------------------------------------------------------------------------
# Dataset level
# ---------------------------------------------------------------------------


def pairwise_matrix(
    dataset: Sequence,
    beta: float = DEFAULT_BETA,
    cost: CostProvider | None = None,
    signed: str | None = None,
    n_jobs: int = 1,
    labels: Sequence[str] | None = None,
    chunk: int = CHUNK,
) -> DissimilarityMatrix:
    """Symmetric matrix of ``sta`` values over every unordered pair of items.

    Failed pairs are NaN and listed in ``metadata["failures"]``.
    """
    cost = cost or CostProvider.sqeuclidean()
    if cost.kind == "precomputed":
        raise UnsupportedError("a precomputed cost applies to one pair, not a dataset")
    if len(dataset) == 0:
        raise DomainError("dataset is empty")
    t0 = time.perf_counter()
    if labels is None:
        labels = [getattr(s, "label", None) or f"item{i}" for i, s in enumerate(dataset)]
    items = [_as_data(s, signed=signed is not None) for s in dataset]
    p = items[0].shape[1]
    if any(d.shape[1] != p for d in items):
        raise DomainError("items disagree on p")
    channels = [split_signed(d, signed) if signed else (d,) for d in items]
    n_ch = len(channels[0])
    lengths = [d.shape[0] for d in items]
    offsets = np.concatenate([[0], np.cumsum(lengths)])
    N = len(items)
    meta: dict = {
        "beta": beta,
        "cost": cost.kind,
        "signed": signed,
        "n_items": N,
        "threads": n_jobs,
        "failures": [],
    }

    # per channel: a frame-level cost table and each item's row indices into it
    tables = []
    if cost.kind == "sinkhorn":
        meta.update(epsilon=cost.params.epsilon, gamma=cost.params.gamma, tol=cost.params.tol, max_iter=cost.params.max_iter)
        agg = {"unique_frames": 0, "cross_solves": 0, "self_solves": 0, "max_iterations": 0, "unconverged": 0, "inconsistent": 0}
        for c in range(n_ch):
            table = FrameTable(np.vstack([ch[c] for ch in channels]), cost, n_jobs, chunk)
            S, C = table.full_matrix()
            tables.append((S, C, table.inverse))
            agg["unique_frames"] += table.n_unique
            for k, v in table.stats.items():
                agg[k] = max(agg[k], v) if k == "max_iterations" else agg[k] + v
        meta["sinkhorn"] = agg
    else:
        for c in range(n_ch):
            F = np.vstack([ch[c] for ch in channels])
            tables.append((_sq_frames(F, F), np.ones((F.shape[0],) * 2, dtype=bool), np.arange(F.shape[0])))

    out = np.empty((N, N))
    for i in range(N):
        for j in range(i, N):
            ri = slice(offsets[i], offsets[i + 1])
            rj = slice(offsets[j], offsets[j + 1])
            delta = np.zeros((lengths[i], lengths[j]))
            flagged = False
            for S, C, inv in tables:
                a_idx, b_idx = inv[ri], inv[rj]
                delta += S[np.ix_(a_idx, b_idx)]
                flagged |= not C[np.ix_(a_idx, b_idx)].all()
            delta /= n_ch
            try:
                val = align_core.sdtw(delta, beta)
            except DomainError as exc:
                val = math.nan
                meta["failures"].append({"pair": [labels[i], labels[j]], "reason": str(exc)})
            if flagged:
                meta["failures"].append({"pair": [labels[i], labels[j]], "reason": "unconverged Sinkhorn solve"})
            out[i, j] = out[j, i] = val
    meta["wall_time_s"] = time.perf_counter() - t0
    logger.info("pairwise matrix: %d items in %.1f s, %s", N, meta["wall_time_s"], meta.get("sinkhorn", {}))
    return DissimilarityMatrix(out, list(labels), meta)
