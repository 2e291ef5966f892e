from __future__ import annotations

import math
from fractions import Fraction

import numpy as np
import pytest

from sta_kit import align_core, timeshift as ts
from sta_kit.delannoy import delannoy
from sta_kit.errors import CapacityError, DomainError


def test_profile_examples():
    p = ts.profile([0, 0, 1, 0, 0])
    assert (p.onset, p.offset, list(p.fluctuation), p.m, p.m_prime) == (2, 3, [2, 3], 2, 2)
    p = ts.profile([0, 1])
    assert p.onset == p.offset == 1
    with pytest.raises(DomainError):
        ts.profile([5, 5, 5])


def test_profile_tolerance():
    x = [0, 1e-9, 1, 1, 1]
    assert ts.profile(x).onset == 1
    assert ts.profile(x, tolerance=1e-6).onset == 2


def test_profile_constant_plateaus():
    rng = np.random.default_rng(0)
    for _ in range(30):
        x = np.repeat(rng.integers(0, 3, 6).astype(float), rng.integers(1, 4, 6))
        if np.all(x == x[0]):
            continue
        p = ts.profile(x)
        assert p.onset <= p.offset
        assert np.all(x[: p.onset] == x[0])
        assert np.all(x[p.offset :] == x[-1])


def test_make_kshift_example():
    np.testing.assert_array_equal(ts.make_kshift([1, 1, 2, 1, 1, 1], 1), [1, 1, 1, 2, 1, 1])
    x = np.array([1.0, 1, 2, 1, 1, 1])
    np.testing.assert_array_equal(ts.make_kshift(x, 0), x)


def test_make_kshift_infeasible():
    with pytest.raises(DomainError, match="largest feasible shift is 2"):
        ts.make_kshift([1, 1, 2, 1, 1, 1], 3)


def test_every_feasible_shift_verifies():
    rng = np.random.default_rng(1)
    for _ in range(40):
        T = int(rng.integers(5, 12))
        start = int(rng.integers(2, T - 1))
        width = int(rng.integers(1, T - start))
        x = ts.pulse(T, start, rng.integers(1, 4, width).astype(float))
        prof = ts.profile(x)
        for k in range(1, prof.max_shift + 1):
            y = ts.make_kshift(x, k)
            assert ts.kshift_violations(x, y, k) == []


def test_verify_detects_wrong_k_and_literal_defects():
    x = np.array([0.0, 0, 1, 2, 0, 0, 0])
    y = ts.make_kshift(x, 1)
    assert ts.verify_kshift(x, y, 1)
    assert set(ts.kshift_violations(x, y, 2)) >= {"onset", "offset"}
    # read verbatim, the tail clause includes x[off] != x[off + 1]
    assert "tail" in ts.kshift_violations(x, y, 1, literal=True)
    assert not ts.verify_kshift(x, x[::-1], 1)


def test_census_constant_series():
    c = ts.census([2.0, 2.0, 2.0], [2.0, 2.0, 2.0])
    assert c.costs == (0.0,) and c.counts == (13,)


def test_census_partition_total():
    x = ts.pulse(6, 3, [1.0, 2.0])
    c = ts.census(x, ts.make_kshift(x, 1))
    assert c.total == delannoy(6, 6)
    s = ts.census(x, x)
    assert s.costs[0] == 0.0


def test_census_guard():
    with pytest.raises(CapacityError):
        ts.census(np.arange(12.0), np.arange(12.0))


def test_zero_cost_ratio_law_small():
    x = ts.pulse(7, 3, [1.0, 2.0])
    prof = ts.profile(x)
    n0 = ts.census(x, x).n0
    for k in range(1, prof.max_shift + 1):
        n0k = ts.census(x, ts.make_kshift(x, k)).n0
        assert Fraction(n0, n0k) == ts.zero_cost_ratio(prof.m, prof.m_prime, k)


def test_sdtw_equals_census_form():
    x = ts.pulse(6, 2, [1.0, 3.0])
    y = ts.make_kshift(x, 2)
    c = ts.census(x, y)
    beta = 0.4
    want = -beta * math.log(sum(n * math.exp(-d / beta) for d, n in zip(c.costs, c.counts)))
    assert align_core.sdtw(ts.sq_cost(x, y), beta) == pytest.approx(want, rel=1e-12)


def test_dtw_blind_to_shifts():
    x = ts.centered_pulse(40, 10)
    for k in range(ts.profile(x).max_shift + 1):
        assert align_core.sdtw(ts.sq_cost(x, ts.make_kshift(x, k)), 0.0) == 0.0


def test_experiment_rows_and_header():
    x = ts.centered_pulse(30, 8)
    rows = ts.shift_gap_experiment(x, [0.0, 0.5], 4)
    assert len(rows) == 2 * 5
    assert [(r.beta, r.k) for r in rows[:5]] == [(0.0, k) for k in range(5)]
    assert rows[0].astuple() == (0.0, 0, 0.0, 0.0, 0.0)
    assert ts.EXPERIMENT_HEADER == ("beta", "k", "gap", "log_ratio_bound", "quadratic_bound")
    with pytest.raises(DomainError, match="largest feasible shift"):
        ts.shift_gap_experiment(x, [0.1], 50)


def test_theorem_bound_holds_on_short_pulse():
    x = ts.pulse(12, 4, [1.0, 2.0, 1.5])
    beta = ts.theorem_beta(x)
    for row in ts.shift_gap_experiment(x, [beta], ts.profile(x).max_shift):
        assert row.gap >= row.quadratic_bound
        if row.k == 1:
            assert row.gap >= beta * (3 * math.sqrt(2) - 4) / (3 * 12)


def test_min_positive_cost():
    assert ts.min_positive_cost([0.0, 0.5, 2.0]) == 0.25
    with pytest.raises(DomainError):
        ts.min_positive_cost([1.0, 1.0])


def test_pulse_helpers():
    np.testing.assert_array_equal(ts.pulse(5, 2, [1, 2], baseline=0.5), [0.5, 1, 2, 0.5, 0.5])
    x = ts.centered_pulse(20, 6, amplitude=2.0)
    assert x.max() <= 2.0 and x.min() == 0.0 and x[0] == 0 and x[-1] == 0
    with pytest.raises(DomainError):
        ts.pulse(5, 5, [1, 2])
