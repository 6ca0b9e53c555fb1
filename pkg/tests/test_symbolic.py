import itertools
import math

import numpy as np
import pytest

from orbitpressure.errors import InfeasiblePeriod
from orbitpressure.symbolic import (
    SymbolicModel,
    admissible_periods,
    bowen_root,
    brute_force_log_word_sum,
    brute_force_primitive_log_sum,
    export_oracle_csv,
    full_shift,
    hyperbolic_potential_certificate,
    periodic_sum_table,
    pressure_periodic,
    sandwich_check,
    verify_balance,
    word_count_bounds,
)

PLASTIC_ROOT = 0.2811995743229617  # log of the real root of t^3 = t + 1


def _model(times, weights, window=None):
    return SymbolicModel(tuple(times), tuple(float(w) for w in weights), window)


def test_admissible_periods_examples():
    m23 = _model((2, 3), (0.0, 0.0))
    assert admissible_periods(m23, 2).periods == (4, 5, 6)
    m5 = _model((5,), (0.0,))
    assert admissible_periods(m5, 3).periods == (15,)
    # brute force over all 2^4 words of length 4
    brute = sorted({sum((2, 3)[i] for i in w) for w in itertools.product((0, 1), repeat=4)})
    assert admissible_periods(m23, 4).periods == tuple(brute) == (8, 9, 10, 11, 12)


def test_admissible_period_window_checks():
    m = _model((2, 3), (0.0, 0.0), window=(2, 0.6))
    for p in range(1, 13):
        assert admissible_periods(m, p).check_window(2, 0.6)


def test_word_count_bounds_examples():
    assert word_count_bounds(12, 2, 0.5) == (4, 6)
    assert word_count_bounds(10, 10, 0.0) == (1, 1)
    with pytest.raises(InfeasiblePeriod):
        word_count_bounds(7, 4, 0.1)


def test_table_single_unit_symbol():
    table = periodic_sum_table(_model((1,), (0.0,)), 20)
    assert np.allclose(table.log_c, 0.0)


def test_table_full_two_shift():
    table = periodic_sum_table(full_shift(2), 30)
    for N in range(31):
        assert table.log_value(N) == pytest.approx(N * math.log(2.0), abs=1e-10)


def test_table_padovan_counts():
    # times {2,3}, zero weights: C[N] follows C[N] = C[N-2] + C[N-3]
    table = periodic_sum_table(_model((2, 3), (0.0, 0.0)), 12)
    expected = [1, 0, 1, 1, 1, 2, 2, 3, 4, 5, 7, 9, 12]
    for N, c in enumerate(expected):
        if c == 0:
            assert not math.isfinite(table.log_value(N))
        else:
            assert table.log_value(N) == pytest.approx(math.log(c), abs=1e-10)


def _dfs_word_sum(times, weights, N):
    """Second independent oracle: explicit word enumeration by DFS."""
    total = 0.0
    k = len(times)

    def rec(remaining, acc):
        nonlocal total
        if remaining == 0:
            total += math.exp(acc)
            return
        for i in range(k):
            if times[i] <= remaining:
                rec(remaining - times[i], acc + weights[i])

    rec(N, 0.0)
    return math.log(total) if total > 0 else -math.inf


def test_multinomial_oracle_matches_dfs_enumeration():
    rng = np.random.default_rng(3)
    for _ in range(10):
        k = int(rng.integers(1, 4))
        times = tuple(int(t) for t in rng.integers(1, 5, size=k))
        weights = tuple(float(w) for w in rng.uniform(-1, 1, size=k))
        m = _model(times, weights)
        for N in (4, 7, 11):
            assert brute_force_log_word_sum(m, N) == pytest.approx(
                _dfs_word_sum(times, weights, N), abs=1e-10, rel=1e-10
            )


def test_table_matches_brute_force_random_models():
    rng = np.random.default_rng(11)
    for _ in range(25):
        k = int(rng.integers(1, 4))
        times = tuple(int(t) for t in rng.integers(1, 5, size=k))
        weights = tuple(float(w) for w in rng.uniform(-1, 1, size=k))
        m = _model(times, weights)
        table = periodic_sum_table(m, 18)
        for N in range(1, 19):
            exact = brute_force_log_word_sum(m, N)
            got = table.log_value(N)
            if math.isfinite(exact) or math.isfinite(got):
                assert got == pytest.approx(exact, abs=1e-10)


def test_pressure_periodic_full_shift():
    est = pressure_periodic(full_shift(2), 40)
    assert est.value == pytest.approx(math.log(2.0), abs=1e-9)
    assert est.lower <= est.value <= est.upper


def test_pressure_periodic_weighted_unit_times():
    m = _model((1, 1), (0.5, -0.2))
    est = pressure_periodic(m, 60)
    assert est.value == pytest.approx(math.log(math.exp(0.5) + math.exp(-0.2)), abs=1e-9)
    assert est.value == pytest.approx(bowen_root(m), abs=1e-9)


def test_pressure_periodic_plastic_model():
    m = _model((2, 3), (0.0, 0.0))
    est = pressure_periodic(m, 60)
    assert abs(est.value - PLASTIC_ROOT) <= 2.0 / 60.0


def test_bowen_root_full_shift_and_closed_form():
    for k in (2, 3, 5):
        assert bowen_root(full_shift(k)) == pytest.approx(math.log(k), abs=1e-11)
    m = _model((1, 1), (0.5, -0.2))
    assert bowen_root(m) == pytest.approx(math.log(math.exp(0.5) + math.exp(-0.2)), abs=1e-11)


def test_bowen_root_plastic_number():
    # independent oracle: the real root of t^3 = t + 1 by bisection on t
    lo, hi = 1.0, 2.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if mid**3 - mid - 1.0 < 0.0:
            lo = mid
        else:
            hi = mid
    plastic = 0.5 * (lo + hi)
    root = bowen_root(_model((2, 3), (0.0, 0.0)))
    assert root == pytest.approx(math.log(plastic), abs=1e-11)
    assert root == pytest.approx(PLASTIC_ROOT, abs=1e-11)


def test_bowen_root_monotone_in_weights():
    rng = np.random.default_rng(5)
    for _ in range(10):
        k = int(rng.integers(1, 4))
        times = tuple(int(t) for t in rng.integers(1, 5, size=k))
        weights = list(rng.uniform(-1, 1, size=k))
        base = bowen_root(_model(times, weights))
        j = int(rng.integers(0, k))
        weights[j] += 0.3
        assert bowen_root(_model(times, weights)) > base


def test_walters_shift_exact():
    rng = np.random.default_rng(6)
    for _ in range(10):
        k = int(rng.integers(1, 4))
        times = tuple(int(t) for t in rng.integers(1, 5, size=k))
        weights = tuple(float(w) for w in rng.uniform(-1, 1, size=k))
        m = _model(times, weights)
        for c in (-1.0, 0.5):
            shifted = m.shifted(c)
            assert bowen_root(shifted) == pytest.approx(bowen_root(m) + c, abs=1e-10)
            a = pressure_periodic(m, 40).value
            b = pressure_periodic(shifted, 40).value
            assert b == pytest.approx(a + c, abs=1e-10)


def test_nonprimitive_words_negligible():
    # non-primitive contributions are exponentially smaller than the full
    # word sum: bounded by the half-period scale alphabet^(N/2) e^(N|w|/2)
    # up to the divisor count, so their share of C[N] decays geometrically
    for m in (full_shift(2), _model((2, 3), (0.1, -0.3))):
        wmax = max(abs(w) for w in m.weights)
        shares = []
        for N in range(6, 15):
            total = brute_force_log_word_sum(m, N)
            prim = brute_force_primitive_log_sum(m, N)
            if not math.isfinite(total):
                continue
            nonprim = math.exp(total) - math.exp(prim)
            divisors = sum(1 for d in range(2, N + 1) if N % d == 0)
            bound = divisors * m.alphabet_size ** (N / 2.0) * math.exp(N * wmax / 2.0)
            assert nonprim <= bound + 1e-9
            shares.append(nonprim / math.exp(total))
        if all(t == 1 for t in m.return_times):
            # without a gcd structure the non-primitive share also decays
            assert shares[-1] < shares[0] < 0.5


def test_saturate_size():
    assert _model((1,), (0.0,)).saturate_size() == 1
    assert _model((2, 3), (0.0, 0.0)).saturate_size() == 5
    assert _model((4, 4, 5), (0.0, 0.0, 0.0)).saturate_size() == 13


def test_verify_balance_synthetic_margins():
    m = _model((2, 3), (0.4, -0.1))
    rep = verify_balance(m, 10, 0.1, words=50)
    assert rep.lower_margin == pytest.approx(1.0, abs=1e-12)
    assert rep.upper_margin == pytest.approx(1.0, abs=1e-12)
    assert rep.passed
    rep0 = verify_balance(m, 10, 0.0)
    assert rep0.lower_margin == pytest.approx(0.0, abs=1e-12)
    assert rep0.upper_margin == pytest.approx(0.0, abs=1e-12)
    # a per-unit-time shift leaves the margins unchanged
    rep_s = verify_balance(m, 10, 0.1, phi_shift=0.7)
    assert rep_s.lower_margin == pytest.approx(1.0, abs=1e-12)


def test_sandwich_examples():
    rep = sandwich_check(full_shift(2), 0.0, 0.0, math.log(2.0), 0.1, 60)
    assert rep.passed
    m = _model((2, 3), (0.0, 0.0))
    rep = sandwich_check(m, 0.0, 0.0, 0.2812, 0.05, 200)
    assert rep.passed
    rep = sandwich_check(m, 0.0, 0.0, 10.0, 0.05, 200)
    assert not rep.passed


def test_certificate_examples():
    rep = hyperbolic_potential_certificate([full_shift(2)], [0.0])
    assert rep.positive
    assert rep.gap == pytest.approx(math.log(2.0), abs=1e-10)

    # one-symbol model whose weight equals the integral: zero gap
    single = _model((1,), (-2.0,))
    rep = hyperbolic_potential_certificate([single], [-2.0])
    assert not rep.positive
    assert rep.gap == pytest.approx(0.0, abs=1e-10)

    m1 = _model((1,), (0.3,))
    m2 = _model((1,), (0.5,))
    rep = hyperbolic_potential_certificate([m1, m2], [0.0, 0.0])
    assert rep.maximizing_sequence[0] == 1
    assert rep.p_hat == pytest.approx(0.5, abs=1e-10)


def test_export_oracle_csv(tmp_path):
    path = tmp_path / "oracle.csv"
    export_oracle_csv(_model((2, 3), (0.0, 0.0)), 12, path)
    rows = path.read_text().strip().splitlines()
    assert rows[0] == "N,log_C_exact,log_C_table,diff"
    assert len(rows) == 13
    # diff column stays at rounding level
    for row in rows[1:]:
        diff = float(row.split(",")[3])
        assert abs(diff) < 1e-10
