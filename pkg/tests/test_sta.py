from __future__ import annotations

import math

import numpy as np
import pytest

from sta_kit import align_core, sta, uot
from sta_kit.delannoy import delannoy
from sta_kit.errors import DomainError, UnsupportedError


def _cost(h=2, w=3, eps=0.5, gamma=1.0, tol=1e-9, exponent=2.0):
    g = uot.normalize_by_median(uot.ground_metric_grid(h, w, exponent))
    k = uot.gibbs_kernel(g, eps)
    return sta.CostProvider.sinkhorn(k, uot.UotParams(eps, gamma, tol=tol, max_iter=100000))


@pytest.fixture
def rng():
    return np.random.default_rng(42)


def test_series_validation():
    s = sta.SpatioTemporalSeries(np.ones((3, 4)), label="a")
    assert (s.T, s.p) == (3, 4)
    with pytest.raises(DomainError):
        sta.SpatioTemporalSeries(-np.ones((3, 4)))
    sta.SpatioTemporalSeries(-np.ones((3, 4)), signed=True)
    with pytest.raises(DomainError):
        sta.SpatioTemporalSeries(np.ones((3, 4)), geometry=uot.ground_metric_grid(2, 3))


def test_cost_provider_checks_epsilon():
    k = uot.gibbs_kernel(uot.ground_metric_grid(2, 2), 1.0)
    with pytest.raises(DomainError):
        sta.CostProvider.sinkhorn(k, uot.UotParams(0.5, 1.0))


def test_self_cost_diagonal_zero(rng):
    x = rng.random((4, 6))
    cm = sta.s_cost_matrix(x, x, _cost())
    assert np.all(np.diag(cm.values) == 0.0)
    assert cm.converged.all()
    assert np.all(cm.values >= -1e-8)


def test_cost_matrix_transpose(rng):
    x, y = rng.random((3, 6)), rng.random((5, 6))
    c = _cost()
    np.testing.assert_array_equal(sta.s_cost_matrix(x, y, c).values, sta.s_cost_matrix(y, x, c).values.T)


def test_cost_entries_match_single_pair_oracle(rng):
    c = _cost(1, 2)
    x = np.array([[1.0, 0.0], [0.0, 1.0]])
    y = np.array([[0.0, 1.0], [1.0, 0.0]])
    cm = sta.s_cost_matrix(x, y, c).values
    assert cm[0, 0] > 0
    for i in range(2):
        for j in range(2):
            want = uot.sinkhorn_divergence(x[i], y[j], c.kernel, c.params)
            assert cm[i, j] == pytest.approx(want, rel=1e-10, abs=1e-12)
    x, y = rng.random((3, 6)) + 0.1, rng.random((2, 6))
    c = _cost()
    cm = sta.s_cost_matrix(x, y, c).values
    for i in range(3):
        for j in range(2):
            assert cm[i, j] == pytest.approx(uot.sinkhorn_divergence(x[i], y[j], c.kernel, c.params), abs=1e-8)


def test_precomputed_and_sqeuclidean(rng):
    x, y = rng.random((3, 4)), rng.random((2, 4))
    sq = sta.s_cost_matrix(x, y, sta.CostProvider.sqeuclidean()).values
    np.testing.assert_allclose(sq, ((x[:, None] - y[None]) ** 2).sum(-1), atol=1e-14)
    pre = sta.CostProvider.precomputed(sq * 2)
    np.testing.assert_array_equal(sta.s_cost_matrix(x, y, pre).values, sq * 2)
    with pytest.raises(DomainError):
        sta.s_cost_matrix(x, x, pre)


def test_self_value_is_log_path_count(rng):
    c = _cost()
    for T, beta in [(3, 1.0), (5, 0.1)]:
        # every alignment costs 0 only when all frames coincide
        x = np.repeat(rng.random((1, 6)), T, axis=0)
        assert sta.sta(x, x, beta, c) == pytest.approx(-beta * math.log(delannoy(T, T)), abs=T * 1e-7)


def test_self_value_bounds_for_varying_frames(rng):
    c = _cost()
    T, beta = 4, 0.5
    x = rng.random((T, 6))
    v = sta.sta(x, x, beta, c)
    assert -beta * math.log(delannoy(T, T)) < v < 0


def test_beta_zero_is_min_alignment(rng):
    c = _cost()
    x, y = rng.random((3, 6)), rng.random((4, 6))
    cm = sta.s_cost_matrix(x, y, c).values
    assert sta.sta(x, y, 0.0, c) == pytest.approx(min(align_core.alignment_costs(cm)), rel=1e-12)


def test_permutation_invariance(rng):
    g = uot.normalize_by_median(uot.ground_metric_grid(2, 3))
    perm = rng.permutation(6)
    gp = uot.GroundGeometry(g.M[np.ix_(perm, perm)], "graph")
    eps = 0.4
    pr = uot.UotParams(eps, 1.0)
    c1 = sta.CostProvider.sinkhorn(uot.gibbs_kernel(g, eps), pr)
    c2 = sta.CostProvider.sinkhorn(uot.gibbs_kernel(gp, eps), pr)
    x, y = rng.random((3, 6)), rng.random((4, 6))
    assert sta.sta(x[:, perm], y[:, perm], 0.1, c2) == pytest.approx(sta.sta(x, y, 0.1, c1), abs=1e-8)


def test_sta_gradient_finite_differences(rng):
    c = _cost(2, 2, eps=0.5, gamma=1.0, tol=1e-12)
    x, y = rng.random((3, 4)) + 0.2, rng.random((3, 4)) + 0.2
    beta = 0.5
    g = sta.sta_gradient(x, y, beta, c)
    h = 1e-5
    fd = np.zeros_like(x)
    for idx in np.ndindex(*x.shape):
        e = np.zeros_like(x)
        e[idx] = h
        fd[idx] = (sta.sta(x + e, y, beta, c) - sta.sta(x - e, y, beta, c)) / (2 * h)
    assert np.abs(g - fd).max() <= 1e-3 * np.abs(fd).max()


def test_sta_gradient_vanishes_at_identity_for_constant_frames(rng):
    c = _cost(2, 2)
    x = np.repeat(rng.random((1, 4)) + 0.2, 3, axis=0)
    assert np.abs(sta.sta_gradient(x, x, 0.3, c)).max() <= 1e-6


def test_sta_gradient_at_identity_with_varying_frames(rng):
    # off-diagonal pairs (i != j) keep a nonzero S gradient, so y = x is not stationary
    c = _cost(2, 2, tol=1e-12)
    x = rng.random((3, 4)) + 0.2
    g = sta.sta_gradient(x, x, 0.3, c)
    h = 1e-5
    fd = np.zeros_like(x)
    for idx in np.ndindex(*x.shape):
        e = np.zeros_like(x)
        e[idx] = h
        fd[idx] = (sta.sta(x + e, x, 0.3, c) - sta.sta(x - e, x, 0.3, c)) / (2 * h)
    assert np.abs(fd).max() > 1e-3
    assert np.abs(g - fd).max() <= 1e-3 * np.abs(fd).max()


def test_sqeuclidean_gradient(rng):
    x, y = rng.random((4, 3)), rng.random((5, 3))
    g = sta.sta_gradient(x, y, 0.2)
    h = 1e-6
    fd = np.zeros_like(x)
    for idx in np.ndindex(*x.shape):
        e = np.zeros_like(x)
        e[idx] = h
        fd[idx] = (sta.sta(x + e, y, 0.2) - sta.sta(x - e, y, 0.2)) / (2 * h)
    np.testing.assert_allclose(g, fd, atol=1e-6)


def test_gradient_errors(rng):
    c = _cost(2, 2)
    x = rng.random((2, 4))
    with pytest.raises(UnsupportedError):
        sta.sta_gradient(x, x, 0.0, c)
    z = x.copy()
    z[0, 0] = 0
    with pytest.raises(DomainError):
        sta.sta_gradient(z, x, 0.1, c)


def test_split_signed_modes(rng):
    c = _cost()
    x, y = rng.random((3, 6)), rng.random((3, 6))
    plain = sta.s_cost_matrix(x, y, c).values
    np.testing.assert_allclose(sta.signed_cost_matrix(x, y, c, "absolute").values, plain, rtol=1e-12)
    np.testing.assert_allclose(sta.signed_cost_matrix(x, y, c, "split-average").values, plain / 2, rtol=1e-12)
    u, v = rng.normal(size=(3, 6)), rng.normal(size=(2, 6))
    split = sta.signed_cost_matrix(u, v, c).values
    swapped = sta.signed_cost_matrix(-u, -v, c).values
    np.testing.assert_allclose(split, swapped, rtol=1e-12)
    assert np.all(split >= -1e-8)
    pos, neg = sta.split_signed(u)
    np.testing.assert_array_equal(pos - neg, u)
    with pytest.raises(DomainError):
        sta.split_signed(u, "bogus")
    assert math.isfinite(sta.sta(u, v, 0.1, c, signed="split-average"))


def test_spatial_sensitivity_monotone():
    g = uot.normalize_by_median(uot.ground_metric_grid(1, 8))
    c = sta.CostProvider.sinkhorn(uot.gibbs_kernel(g, 0.1), uot.UotParams(0.1, 1.0))
    T = 3
    base = np.zeros((T, 8))
    base[:, 0] = 1.0
    same = sta.sta(base, base, 0.1, c)
    values = []
    for d in range(1, 8):
        y = np.zeros((T, 8))
        y[:, d] = 1.0
        values.append(sta.sta(base, y, 0.1, c))
    assert values[0] > same
    assert all(b > a for a, b in zip(values, values[1:]))


def test_temporal_sensitivity_increases_with_shift():
    c = _cost(1, 4, eps=0.3)
    T = 12
    x = np.zeros((T, 4))
    x[4:6, 1] = [1.0, 2.0]
    gaps = []
    base = sta.sta(x, x, 0.5, c)
    for k in range(1, 5):
        y = np.vstack([np.repeat(x[:1], k, 0), x[: T - k]])
        gaps.append(sta.sta(x, y, 0.5, c) - base)
    assert gaps[0] > 0
    assert all(b > a for a, b in zip(gaps, gaps[1:]))


def test_pairwise_basics(rng):
    c = _cost()
    data = [rng.random((3, 6)), rng.random((4, 6)), rng.random((2, 6))]
    one = sta.pairwise_matrix(data[:1], 0.1, c)
    assert one.values.shape == (1, 1)
    assert one.values[0, 0] == pytest.approx(sta.sta(data[0], data[0], 0.1, c), rel=1e-12)
    dm = sta.pairwise_matrix(data, 0.1, c, labels=["a", "b", "c"])
    np.testing.assert_array_equal(dm.values, dm.values.T)
    for i in range(3):
        for j in range(3):
            assert dm.values[i, j] == pytest.approx(sta.sta(data[i], data[j], 0.1, c), rel=1e-9, abs=1e-9)
    assert dm.labels == ["a", "b", "c"]
    meta = dm.metadata
    assert meta["sinkhorn"]["self_solves"] == 9 and meta["failures"] == []
    sq = sta.pairwise_matrix(data, 0.1)
    assert sq.values[1, 2] == pytest.approx(sta.sta(data[1], data[2], 0.1))
    with pytest.raises(DomainError):
        sta.pairwise_matrix([], 0.1, c)


def test_pairwise_thread_and_chunk_independence(rng):
    c = _cost()
    data = [rng.random((3, 6)) for _ in range(5)]
    a = sta.pairwise_matrix(data, 0.1, c, n_jobs=1, chunk=7)
    b = sta.pairwise_matrix(data, 0.1, c, n_jobs=4, chunk=7)
    assert a.values.tobytes() == b.values.tobytes()


def test_pairwise_failure_sentinel(rng, monkeypatch):
    c = _cost()
    data = [rng.random((2, 6)) for _ in range(3)]
    real = sta.FrameTable._solve_chunk

    def broken(self, iu, iv):
        vals, conv, ok, res = real(self, iu, iv)
        ok = ok.copy()
        ok[0] = False
        return vals, conv, ok, res

    monkeypatch.setattr(sta.FrameTable, "_solve_chunk", broken)
    dm = sta.pairwise_matrix(data, 0.1, c)
    assert np.isnan(dm.values).any()
    assert dm.metadata["failures"]
    assert dm.metadata["sinkhorn"]["inconsistent"] == 1


def test_pairwise_signed(rng):
    c = _cost()
    data = [rng.normal(size=(3, 6)) for _ in range(3)]
    dm = sta.pairwise_matrix(data, 0.1, c, signed="split-average")
    for i in range(3):
        assert dm.values[i, (i + 1) % 3] == pytest.approx(
            sta.sta(data[i], data[(i + 1) % 3], 0.1, c, signed="split-average"), rel=1e-9
        )
