import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tss_gossip import analytic as an
from tss_gossip.analytic import CriticalRateQuery, DomainError, NoBracket, NotMonotone, Source

from oracles import exact_order_stat_mean, exact_race, harmonic_fraction, mc_race, sample_order_stat

rates_strategy = st.floats(0.05, 500.0, allow_nan=False)


# --- harmonic sums and order statistics ---------------------------------------


def test_harmonic_examples():
    assert an.harmonic_sum(1, 1) == 1.0
    assert an.harmonic_sum(2, 4) == pytest.approx(13 / 12, rel=1e-15)
    assert an.harmonic_sum(5, 4) == 0.0
    with pytest.raises(DomainError):
        an.harmonic_sum(0, 3)
    with pytest.raises(DomainError):
        an.harmonic_sum(5, 2)


@given(st.integers(1, 400), st.integers(-1, 400))
def test_harmonic_matches_exact_fractions(a, extra):
    b = max(a - 1, a + extra)
    assert an.harmonic_sum(a, b) == pytest.approx(float(harmonic_fraction(a, b)), rel=1e-13, abs=0)


def test_exp_order_stat_examples():
    assert an.exp_order_stat_mean(1, 5, 1.0) == pytest.approx(0.2)
    assert an.exp_order_stat_mean(5, 5, 1.0) == pytest.approx(137 / 60)
    assert an.exp_order_stat_mean(2, 5, 1.0) == pytest.approx(0.45)
    with pytest.raises(DomainError):
        an.exp_order_stat_mean(6, 5, 1.0)


def test_exp_order_stat_sampling_oracle():
    x = sample_order_stat(2, [1.0] * 5, 1_000_000, np.random.default_rng(11))
    assert abs(x.mean() - an.exp_order_stat_mean(2, 5, 1.0)) < 0.003


@given(st.lists(rates_strategy, min_size=1, max_size=7), st.data())
def test_heterogeneous_order_stat_mean_matches_expansion(rates, data):
    k = data.draw(st.integers(1, len(rates)))
    assert an.order_stat_mean(k, rates) == pytest.approx(exact_order_stat_mean(k, rates), rel=1e-11)


@given(st.lists(rates_strategy, min_size=1, max_size=7), st.floats(0.01, 100.0), st.data())
def test_race_matches_expansion(rates, lambda_s, data):
    k = data.draw(st.integers(1, len(rates)))
    transform, prob = exact_race(k, rates, lambda_s)
    assert an.expected_min_order_stat(k, rates, lambda_s) == pytest.approx(transform, rel=1e-11)
    assert an.prob_order_stat_before(k, rates, lambda_s) == pytest.approx(prob, rel=1e-9, abs=1e-14)


def test_quadrature_route_for_many_edges():
    # beyond the subset-enumeration limit the survival function is integrated
    rates = [2.0] * 25
    assert an.order_stat_mean(7, rates) == pytest.approx(an.exp_order_stat_mean(7, 25, 2.0), rel=1e-8)
    rng = np.random.default_rng(5)
    het = rng.uniform(0.5, 3.0, size=24)
    e, p = mc_race(6, het, 4.0, 400_000, np.random.default_rng(6))
    assert an.expected_min_order_stat(6, het, 4.0) == pytest.approx(e, rel=0.01)
    assert an.prob_order_stat_before(6, het, 4.0) == pytest.approx(p, rel=0.01)


# --- memory scheme ----------------------------------------------------------------


def test_memory_full_examples():
    assert an.age_memory_full(0, 5, [20.0] * 5, 10.0).value == 0.0
    res = an.age_memory_full(2, 5, [100 / 5] * 5, 10.0)
    assert res.value == pytest.approx(0.225)
    assert res.source is Source.MEMORY_FULL
    assert an.age_memory_full(1, 2, [1.0, 2.0], 1.0).value == pytest.approx(1 / 3)
    with pytest.raises(DomainError):
        an.age_memory_full(3, 2, [1.0, 2.0], 1.0)


def test_memory_total_key_examples():
    sub = an.age_memory_total_key(2, 6, 10, 10, 100, "subscriber")
    assert sub.value == pytest.approx(0.405)
    assert sub.source is Source.MEMORY_TOTAL_SUBSCRIBER
    assert an.age_memory_total_key(0, 6, 10, 10, 100, "subscriber").value == 0.0
    with pytest.raises(DomainError):
        an.age_memory_total_key(6, 6, 10, 10, 100, "subscriber")


@st.composite
def total_key(draw):
    m = draw(st.integers(2, 200))
    n = draw(st.integers(1, m))
    k = draw(st.integers(0, n - 1))
    return k, n, m, draw(st.floats(0.01, 100)), draw(st.floats(0.01, 1000))


@given(total_key())
def test_nonsubscriber_minus_subscriber_telescopes(p):
    k, n, m, ls, le = p
    diff = an.age_memory_total_key(k, n, m, ls, le, "nonsubscriber").value - an.age_memory_total_key(
        k, n, m, ls, le, "subscriber"
    ).value
    assert diff == pytest.approx((m - 1) * ls / (le * n), rel=1e-9)


@given(st.integers(1, 10), st.integers(2, 30), st.integers(0, 30), st.floats(0.5, 50), st.floats(1, 500))
def test_total_key_monotonicity(k, n, extra, ls, le):
    if k >= n - 1:
        k = n - 2
    if k < 1:
        return
    m = n + extra
    for cls in ("subscriber", "nonsubscriber"):
        f = lambda **kw: an.age_memory_total_key(
            kw.get("k", k), kw.get("n", n), kw.get("m", m), ls, kw.get("le", le), cls
        ).value
        assert f(le=le * 1.5) < f()
        assert f(k=k + 1) > f()
        assert f(m=m + 1) > f()
        assert f(n=n + 1, m=max(m, n + 1)) < f(m=max(m, n + 1))


def test_memory_asymptote_examples():
    assert an.asymptote_memory(10, 1.0, 15, 50) == pytest.approx(3.0)
    assert an.asymptote_memory(0, 1.0, 15, 50) == 0.0
    assert an.asymptote_memory(10, 1.0, 15, 150) == pytest.approx(1.0)
    for alpha in (0.0, 1.5, -0.1):
        with pytest.raises(DomainError):
            an.asymptote_memory(1, alpha, 1, 1)


def test_partial_bounds_examples():
    b = an.bounds_memory_partial(4, 8, 3, 12, 10, 100)
    assert b.lower == pytest.approx(1.1 * float(harmonic_fraction(8, 11)))
    assert b.upper == pytest.approx(1.1 * float(harmonic_fraction(4, 8)))
    z = an.bounds_memory_partial(0, 8, 3, 12, 10, 100)
    assert z.lower == 0.0 and z.upper == pytest.approx(1.1 / 8)
    with pytest.raises(DomainError):
        an.bounds_memory_partial(8, 8, 3, 12, 10, 100)


@given(total_key())
def test_bounds_ordered_and_nest_full_subscription(p):
    k, n, m, ls, le = p
    s = min(n, max(0, n - 1))
    b = an.bounds_memory_partial(k, n, s, m, ls, le)
    assert 0 <= b.lower <= b.upper
    if m >= 2 and n == m:
        full = an.memory_graph_age(k, m, m, m, ls, le).value
        assert b.lower <= full * (1 + 1e-12) and full <= b.upper * (1 + 1e-12)


def test_relative_gap_examples():
    assert an.relative_gap_bound(4, 8, 12) == pytest.approx(39 / 16)
    k, n, m = 4, 8, 12
    exact = Fraction((m - n) * k + m - 1 - k + k * k, (n - k) * k)
    assert exact == Fraction(39, 16)
    assert an.asymptotic_relative_gap(1, 1.0) == pytest.approx(1.0)
    for k in (1, 5, 50, 500):
        assert an.asymptotic_relative_gap(k, 1.0) == pytest.approx(1 / k)
    with pytest.raises(DomainError):
        an.relative_gap_bound(0, 8, 12)
    with pytest.raises(DomainError):
        an.asymptotic_relative_gap(0, 0.5)


@given(st.integers(1, 20), st.integers(0, 30), st.integers(0, 60), st.floats(0.1, 10), st.floats(0.1, 100))
def test_relative_gap_bounds_the_actual_gap(k, dn, dm, ls, le):
    n = k + 1 + dn
    m = n + dm
    b = an.bounds_memory_partial(k, n, 0, max(m, 2), ls, le)
    assert (b.upper - b.lower) / b.lower <= an.relative_gap_bound(k, n, max(m, 2)) * (1 + 1e-12)


def test_asymptotic_bounds_examples():
    b = an.asymptote_bounds_memory_partial(1, 1.0, 3.0, 3.0)
    assert (b.lower, b.upper) == pytest.approx((1.0, 2.0))
    b = an.asymptote_bounds_memory_partial(4, 0.5, 10, 100)
    assert (b.lower, b.upper) == pytest.approx((0.4, 1.0))


def test_asymptotic_bounds_ordered_random():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        k = int(rng.integers(0, 50))
        b = an.asymptote_bounds_memory_partial(k, rng.uniform(1e-3, 1.0), rng.uniform(0.01, 100), rng.uniform(0.01, 100))
        assert b.lower <= b.upper


# --- memoryless scheme -----------------------------------------------------------


def test_coefficient_examples():
    assert an.coeff_A(6, 10, 0, 10, 100) == 1.0
    assert an.coeff_B(6, 6, 1) == 1.0
    assert an.coeff_A(6, 10, 1, 10, 100) == pytest.approx(50 / 59)
    with pytest.raises(DomainError):
        an.coeff_A(6, 10, 6, 10, 100)
    with pytest.raises(DomainError):
        an.coeff_B(6, 10, 6)


def test_coefficient_monte_carlo():
    # minimum of 5 exponentials with rate 100/9 against an Exp(10)
    _, p = mc_race(1, [100 / 9] * 5, 10.0, 1_000_000, np.random.default_rng(2))
    assert an.coeff_A(6, 10, 1, 10, 100) == pytest.approx(p, rel=0.01)


@given(st.integers(2, 60), st.integers(0, 60), st.floats(0.01, 100), st.floats(0.01, 1000))
def test_coeff_A_strictly_decreasing(n, extra, ls, le):
    m = n + extra
    values = [an.coeff_A(n, m, j, ls, le) for j in range(n)]
    assert all(0 < v <= 1 for v in values)
    assert all(b < a for a, b in zip(values, values[1:]))


def test_race_k1_closed_form():
    for n_t, m, ls, le in [(2, 2, 1.0, 1.0), (6, 10, 10, 100), (30, 40, 3, 7)]:
        e = an.expected_min_orderstat_update(1, n_t, m, ls, le)
        assert e == pytest.approx(1 / (le * (n_t - 1) / (m - 1) + ls))


@st.composite
def race_args(draw):
    n_t = draw(st.integers(2, 40))
    k_t = draw(st.integers(1, n_t - 1))
    m = draw(st.integers(max(2, n_t - 1), 80))
    return k_t, n_t, m, draw(st.floats(0.01, 100)), draw(st.floats(0.01, 1000))


@given(race_args())
def test_race_properties(args):
    k_t, n_t, m, ls, le = args
    p = an.prob_decode_before_update(*args)
    e = an.expected_min_orderstat_update(*args)
    assert 0 < p < 1
    cap = min(an.exp_order_stat_mean(k_t, n_t - 1, le / (m - 1)), 1 / ls)
    assert e <= cap * (1 + 1e-12)
    # agrees with the general heterogeneous route on identical rates
    if n_t - 1 <= 12:
        rates = [le / (m - 1)] * (n_t - 1)
        assert e == pytest.approx(an.expected_min_order_stat(k_t, rates, ls), rel=1e-10)
        assert p == pytest.approx(an.prob_order_stat_before(k_t, rates, ls), rel=1e-9)


def test_race_monte_carlo_example():
    e, p = mc_race(2, [100 / 9] * 5, 10.0, 1_000_000, np.random.default_rng(3))
    assert an.expected_min_orderstat_update(2, 6, 10, 10, 100) == pytest.approx(e, rel=0.01)
    assert an.prob_decode_before_update(2, 6, 10, 10, 100) == pytest.approx(p, rel=0.01)


def test_memoryless_full_examples():
    assert an.age_memoryless_full(0, 5, 10, [20.0] * 5).value == 0.0
    mem = an.age_memory_full(2, 5, [20.0] * 5, 10.0).value
    gaps = []
    for ratio in (1e2, 1e4, 1e6):
        le = ratio * 10.0
        ml = an.age_memoryless_full(2, 5, 10.0, [le / 5] * 5).value
        mm = an.age_memory_full(2, 5, [le / 5] * 5, 10.0).value
        gaps.append(abs(ml - mm))
    assert gaps[0] > gaps[1] > gaps[2]
    le = 1e6 * 10.0
    assert an.age_memoryless_full(2, 5, 10.0, [le / 5] * 5).value == pytest.approx(
        an.age_memory_full(2, 5, [le / 5] * 5, 10.0).value, rel=1e-3
    )
    assert mem > 0


def test_memoryless_full_heterogeneous_matches_expansion():
    rates = [1.0, 2.5, 0.7, 4.0]
    e, p = exact_race(2, rates, 3.0)
    assert an.age_memoryless_full(2, 4, 3.0, rates).value == pytest.approx(3.0 * e / p, rel=1e-10)


def test_memoryless_total_key_nonsubscriber_reduces_to_single_family():
    k, n, m, ls, le = 2, 6, 10, 10.0, 100.0
    res = an.age_memoryless_partial(k, n, n, m, ls, le, "nonsubscriber").value
    single = ls * an.expected_min_orderstat_update(k + 1, n + 1, m, ls, le) / an.prob_decode_before_update(
        k + 1, n + 1, m, ls, le
    )
    assert res == pytest.approx(single, rel=1e-14)


def test_memoryless_subscriber_equals_full_subscription_node():
    # a subscriber waits for k keys from the other n - 1 holders, each at lambda_e / (m - 1)
    k, n, s, m, ls, le = 3, 8, 3, 12, 10.0, 60.0
    sub = an.age_memoryless_partial(k, n, s, m, ls, le, "subscriber").value
    e, p = exact_race(k, [le / (m - 1)] * (n - 1), ls)
    assert sub == pytest.approx(ls * e / p, rel=1e-10)


def test_memoryless_nonsubscriber_mixture_matches_expansion():
    # held with probability (n - s)/(m - s): k keys from n - 1 holders, else k + 1 from n
    k, n, s, m, ls, le = 2, 6, 2, 11, 10.0, 40.0
    r = le / (m - 1)
    e1, p1 = exact_race(k, [r] * (n - 1), ls)
    e2, p2 = exact_race(k + 1, [r] * n, ls)
    w1, w2 = (n - s) / (m - s), (m - n) / (m - s)
    expected = ls * (w1 * e1 + w2 * e2) / (w1 * p1 + w2 * p2)
    assert an.age_memoryless_partial(k, n, s, m, ls, le, "nonsubscriber").value == pytest.approx(expected, rel=1e-10)


@st.composite
def partial(draw):
    m = draw(st.integers(3, 40))
    n = draw(st.integers(2, m - 1))
    s = draw(st.integers(0, n))
    k = draw(st.integers(0, n - 1))
    return k, n, s, m, draw(st.floats(0.1, 20)), draw(st.floats(1, 500))


@given(partial())
def test_subscriber_not_older_than_nonsubscriber(p):
    k, n, s, m, ls, le = p
    sub = an.age_memoryless_partial(k, n, s, m, ls, le, "subscriber").value
    non = an.age_memoryless_partial(k, n, s, m, ls, le, "nonsubscriber").value
    assert sub <= non * (1 + 1e-12)


def test_subscriber_not_older_than_nonsubscriber_random_1000():
    rng = np.random.default_rng(4)
    for _ in range(1000):
        m = int(rng.integers(3, 60))
        n = int(rng.integers(2, m))
        s = int(rng.integers(0, n + 1))
        k = int(rng.integers(0, n))
        ls, le = rng.uniform(0.1, 20), rng.uniform(1, 500)
        sub = an.age_memoryless_partial(k, n, s, m, ls, le, "subscriber").value
        non = an.age_memoryless_partial(k, n, s, m, ls, le, "nonsubscriber").value
        assert sub <= non * (1 + 1e-12)


def test_memoryless_never_beats_memory_on_random_total_key_grid():
    rng = np.random.default_rng(7)
    for _ in range(200):
        m = int(rng.integers(2, 50))
        n = int(rng.integers(1, m + 1))
        k = int(rng.integers(0, n))
        ls, le = rng.uniform(0.1, 20), rng.uniform(0.5, 500)
        classes = ["subscriber"] + (["nonsubscriber"] if m > n else [])
        for cls in classes:
            mem = an.age_memory_total_key(k, n, m, ls, le, cls).value
            ml = an.age_memoryless_partial(k, n, n, m, ls, le, cls).value
            assert ml >= mem * (1 - 1e-12)


def test_graph_average_examples():
    assert an.graph_average(1.0, 3.0, 4, 4).value == 1.0
    assert an.graph_average(1.0, 3.0, 0, 4).value == 3.0
    assert an.graph_average(1.0, 3.0, 2, 4).value == pytest.approx(2.0)


def test_memoryless_asymptote_examples():
    assert an.asymptote_memoryless(10, 1.0, 15, 50, "graph") == pytest.approx(1.3**10 - 1)
    assert an.asymptote_memoryless(10, 1.0, 15, 50, "graph") == pytest.approx(12.7858, abs=5e-5)
    for k in (0, 3, 9):
        assert an.asymptote_memoryless(k, 1.0, 7, 30, "graph") == pytest.approx(
            an.asymptote_memoryless(k, 1.0, 7, 30, "subscriber")
        )
    for alpha in (0.2, 0.7, 1.0):
        assert an.asymptote_memoryless(0, alpha, 7, 30, "graph") == pytest.approx((1 - alpha) * 7 / (alpha * 30))
        assert an.asymptote_memoryless(0, alpha, 7, 30, "subscriber") == 0.0
    with pytest.raises(DomainError):
        an.asymptote_memoryless(1, 1.0, 1, 1, "nobody")


def test_large_network_values_approach_asymptotes():
    k, ls, le, m = 10, 15.0, 50.0, 10_000
    mem = an.memory_graph_age(k, m, m, m, ls, le).value
    assert mem == pytest.approx(an.asymptote_memory(k, 1.0, ls, le), rel=0.01)
    ml = an.memoryless_graph_age(k, m, m, m, ls, le).value
    assert ml == pytest.approx(an.asymptote_memoryless(k, 1.0, ls, le, "graph"), rel=0.01)


# --- critical gossip rate --------------------------------------------------------


def test_critical_rate_huge_epsilon_is_negligible():
    # the gap grows like 1/lambda_e near zero, so the infimum is tiny but positive
    res = an.critical_gossip_rate(CriticalRateQuery(2, 30, 30, 30, 15.0, 1e9))
    assert 0 <= res.value < 1e-4 * 15.0 and res.gap <= 1e9
    # below the search floor the rate is reported as zero
    assert an.critical_gossip_rate(CriticalRateQuery(2, 30, 30, 30, 15.0, 1e40)).value == 0.0


def test_critical_rate_postconditions_and_orderings():
    table = {}
    for k in (2, 5, 8):
        for eps in (1.0, 0.1, 0.01):
            res = an.critical_gossip_rate(CriticalRateQuery(k, 30, 30, 30, 15.0, eps))
            assert res.gap <= eps
            assert an.memory_gap(k, 30, 30, 30, 15.0, 0.99 * res.value) > eps
            assert not res.upper_bound_only
            table[k, eps] = res.value
    for eps in (1.0, 0.1, 0.01):
        assert table[2, eps] < table[5, eps] < table[8, eps]
    for k in (2, 5, 8):
        assert table[k, 1.0] <= table[k, 0.1] <= table[k, 0.01]


def test_critical_rate_resolution():
    res = an.critical_gossip_rate(CriticalRateQuery(3, 10, 10, 10, 5.0, 0.05))
    lo = res.value / (1 + 1e-6)
    assert an.memory_gap(3, 10, 10, 10, 5.0, lo) > 0.05 or math.isclose(lo, res.value, rel_tol=1e-6)


def test_critical_rate_partial_key_is_flagged():
    res = an.critical_gossip_rate(CriticalRateQuery(2, 8, 3, 12, 10.0, 0.1))
    assert res.upper_bound_only and res.gap <= 0.1


def test_critical_rate_errors(monkeypatch):
    with pytest.raises(DomainError):
        an.critical_gossip_rate(CriticalRateQuery(2, 30, 30, 30, 15.0, 0.0))
    with pytest.raises(NoBracket):
        an.critical_gossip_rate(CriticalRateQuery(2, 30, 30, 30, 15.0, 1e-300))
    monkeypatch.setattr(an, "memory_gap", lambda k, n, s, m, ls, le: (1.5 + math.sin(4 * math.log(le))) / le)
    with pytest.raises(NotMonotone):
        an.critical_gossip_rate(CriticalRateQuery(2, 30, 30, 30, 15.0, 0.001))
