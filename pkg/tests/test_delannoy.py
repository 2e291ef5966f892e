from __future__ import annotations

import math
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sta_kit import align_core, delannoy as dl
from sta_kit.errors import DomainError


def _delannoy_memo(m: int, n: int, memo={}) -> int:
    """Independent oracle from the plain three-term recursion."""
    if m == 1 or n == 1:
        return 1
    key = (m, n)
    if key not in memo:
        memo[key] = _delannoy_memo(m - 1, n) + _delannoy_memo(m, n - 1) + _delannoy_memo(m - 1, n - 1)
    return memo[key]


def test_known_values():
    assert [dl.central(m) for m in range(1, 7)] == [1, 3, 13, 63, 321, 1683]
    assert dl.delannoy(2, 4) == 7
    assert dl.delannoy(1, 9) == 1


def test_recursion_and_symmetry_to_60():
    for m in range(1, 61):
        for n in range(1, 61):
            d = dl.delannoy(m, n)
            assert d == dl.delannoy(n, m)
            if m > 1 and n > 1:
                assert d == dl.delannoy(m - 1, n) + dl.delannoy(m, n - 1) + dl.delannoy(m - 1, n - 1)
    assert dl.delannoy(60, 60) == _delannoy_memo(60, 60)


def test_counts_match_enumeration():
    for m in range(1, 7):
        for n in range(1, 7):
            assert len(align_core.enumerate_alignments(m, n)) == dl.delannoy(m, n)


def test_table_view():
    tab = dl.delannoy_table(4, 6)
    assert tab[3, 3] == 13 and tab[4, 6] == dl.delannoy(4, 6)
    with pytest.raises(DomainError):
        dl.delannoy_table(0, 3)


def test_index_domain():
    with pytest.raises(DomainError):
        dl.delannoy(0, 3)


def test_central_recursion_and_growth():
    assert dl.central_delannoy_recursion_check(60)
    assert dl.growth_check(60)


def test_log_int_matches_math_log_on_big_integers():
    for m in (5, 50, 500, 900):
        n = dl.central(m)
        assert dl.log_int(n) == pytest.approx(math.log(n), rel=1e-14)


def test_qsqrt2_exact_arithmetic():
    c = dl.C
    assert c * (dl.SQRT2 - 1) == 1
    assert dl.SQRT2 * dl.SQRT2 == 2
    assert 1 - 1 / c == 2 - dl.SQRT2
    # convergents of sqrt(2) alternate around it
    assert dl.SQRT2 < Fraction(99, 70) and dl.SQRT2 > Fraction(41, 29)
    assert dl.SQRT2 < Fraction(665857, 470832)
    assert float(dl.SQRT2 - Fraction(665857, 470832)) < 0


@settings(max_examples=100, deadline=None)
@given(st.fractions(-50, 50), st.fractions(-50, 50), st.fractions(-50, 50), st.fractions(-50, 50))
def test_qsqrt2_agrees_with_floats(a, b, c, d):
    x, y = dl.QSqrt2(a, b), dl.QSqrt2(c, d)
    fx, fy = float(a) + float(b) * math.sqrt(2), float(c) + float(d) * math.sqrt(2)
    assert float(x * y) == pytest.approx(fx * fy, rel=1e-9, abs=1e-9)
    assert float(x + y) == pytest.approx(fx + fy, rel=1e-9, abs=1e-9)
    if abs(fx - fy) > 1e-6:
        assert (x < y) == (fx < fy)


def test_phi_psi_at_first_shift():
    # Psi(m, 1) = 1 and Phi(1, 1) = 1 - 1/c
    for m in range(1, 10):
        assert dl.psi_exact(m, 1) == 1
    assert dl.phi_exact(1, 1) == 1 - 1 / dl.C


def test_offdiagonal_inequalities_small_sweep():
    rows = dl.sweep(12, 12)
    assert all(r.ok for r in rows)
    assert all(r.slack_a >= 0 and r.slack_b >= 0 and r.slack_lemma >= 0 for r in rows)


def test_technical_lemma_equality_at_origin():
    left, middle, right = dl.technical_lemma_terms(1, 1)
    assert left == middle == right == Fraction(1, 2) + dl.SQRT2


def test_log_ratio_zero_shift():
    lr = dl.log_ratio_bound(4, 6, 0)
    assert lr.log_ratio == 0.0 and lr.product_bound == 0.0


def test_log_ratio_example():
    lr = dl.log_ratio_bound(3, 5, 2)
    exact = math.log(Fraction(dl.central(3) * dl.central(5), dl.delannoy(5, 3) * dl.delannoy(3, 5)))
    assert lr.log_ratio == pytest.approx(exact, rel=1e-14)
    assert lr.log_ratio >= lr.product_bound
    assert dl.product_bound_check(3, 5, 2)


def test_log_ratio_feasibility():
    with pytest.raises(DomainError):
        dl.log_ratio_bound(3, 5, 5)


def test_product_bound_sweep():
    for m in range(1, 21):
        for mp in range(1, 21):
            for k in range(0, mp):
                assert dl.product_bound_check(m, mp, k), (m, mp, k)


def test_log_ratio_dominates_quadratic_bound_sweep():
    for m in range(1, 21):
        for mp in range(1, 21):
            T = m + mp
            for k in range(1, mp):
                lr = dl.log_ratio_bound(m, mp, k)
                assert lr.log_ratio >= lr.product_bound - 1e-12
                beta = 0.37
                lhs = beta * lr.product_bound - beta / (3 * T)
                assert lhs >= dl.quadratic_bound(beta, m, mp, T, k) - 1e-12, (m, mp, k)


def test_quadratic_bound_values():
    T = 20
    rho = (3 * math.sqrt(2) - 4) / (3 * T)
    assert dl.quadratic_bound(0.3, 5, 10, T, 1) == pytest.approx(0.3 * rho, rel=1e-14)
    alpha = (2 - math.sqrt(2)) / 2 * (1 / 10 + 1 / 15)
    want = 0.1 * alpha * 6 + 0.1 * rho * 3
    assert dl.quadratic_bound(0.1, 5, 10, T, 3) == pytest.approx(want, rel=1e-14)
    with pytest.raises(DomainError):
        dl.quadratic_bound(0.0, 5, 10, T, 3)


def test_beta_threshold():
    assert dl.beta_threshold(1.0, 2) == pytest.approx(1 / math.log(18), rel=1e-14)
    assert dl.beta_threshold(2.0, 7) == pytest.approx(2 * dl.beta_threshold(1.0, 7), rel=1e-14)
    assert dl.beta_threshold(1.0, 400) < 0.01
    # beyond double range of D_{T,T}
    assert dl.beta_threshold(1.0, 600) == pytest.approx(1 / (math.log(1800) + math.log(dl.central(600))), rel=1e-12)
    with pytest.raises(DomainError):
        dl.beta_threshold(0.0, 5)


def test_bound_terms():
    bt = dl.bound_terms(5, 10, 20, mu=1.0)
    assert bt.c == pytest.approx(1 + math.sqrt(2))
    assert bt.beta_max == dl.beta_threshold(1.0, 20)
