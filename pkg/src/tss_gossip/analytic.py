"""Closed-form version-age expressions for gossip networks with threshold-coded updates.

All ages are dimensionless expected version ages (number of versions behind).
Unless stated otherwise the network is a scalable homogeneous network: ``m``
receivers, fully connected, every directed edge firing at ``lambda_e / (m - 1)``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from scipy import integrate

from .model import NodeClass

# exact subset enumeration up to this many incoming edges, quadrature beyond
MAX_SUBSET_EDGES = 20
QUAD_EPSABS = 1e-10


class DomainError(ValueError):
    """Arguments outside the domain where an expression is defined."""


class NoBracket(RuntimeError):
    pass


class NotMonotone(RuntimeError):
    pass


class Source(enum.Enum):
    MEMORY_FULL = "memory_full"
    MEMORY_TOTAL_SUBSCRIBER = "memory_total_subscriber"
    MEMORY_TOTAL_NONSUBSCRIBER = "memory_total_nonsubscriber"
    MEMORY_ASYMPTOTE = "memory_asymptote"
    MEMORY_PARTIAL_BOUNDS = "memory_partial_bounds"
    MEMORY_PARTIAL_ASYMPTOTE_BOUNDS = "memory_partial_asymptote_bounds"
    MEMORYLESS_FULL = "memoryless_full"
    MEMORYLESS_SUBSCRIBER = "memoryless_subscriber"
    MEMORYLESS_NONSUBSCRIBER = "memoryless_nonsubscriber"
    MEMORYLESS_ASYMPTOTE = "memoryless_asymptote"
    GRAPH_AVERAGE = "graph_average"


@dataclass(frozen=True)
class AnalyticResult:
    value: float
    source: Source

    def __float__(self) -> float:
        return self.value


@dataclass(frozen=True)
class BoundPair:
    lower: float
    upper: float
    source: Source = Source.MEMORY_PARTIAL_BOUNDS

    def contains(self, x: float) -> bool:
        return self.lower <= x <= self.upper


@dataclass(frozen=True)
class CriticalRateQuery:
    k: int
    n: int
    s: int
    m: int
    lambda_s: float
    epsilon: float


@dataclass(frozen=True)
class CriticalRate:
    """Result of :func:`critical_gossip_rate`.

    ``upper_bound_only`` is set for partial-key networks, where the memory age
    is replaced by its upper bound and the rate is therefore only an upper bound.
    """

    value: float
    gap: float
    upper_bound_only: bool = False


def _check_positive(**kwargs: float) -> None:
    for name, x in kwargs.items():
        if not (math.isfinite(x) and x > 0):
            raise DomainError(f"{name} must be positive and finite, got {x!r}")


def _check_alpha(alpha: float) -> None:
    if not (0.0 < alpha <= 1.0):
        raise DomainError(f"alpha must lie in (0, 1], got {alpha!r}")


# ---------------------------------------------------------------------------
# order statistics
# ---------------------------------------------------------------------------


def harmonic_sum(a: int, b: int) -> float:
    """Return ``sum(1/i for i in a..b)``; an empty range (``b = a - 1``) gives 0."""
    if a < 1:
        raise DomainError(f"harmonic_sum needs a >= 1, got a={a}")
    if b < a - 1:
        raise DomainError(f"harmonic_sum needs b >= a - 1, got a={a}, b={b}")
    total = 0.0
    for i in range(a, b + 1):
        total += 1.0 / i
    return total


def exp_order_stat_mean(k: int, n: int, lam: float) -> float:
    """Mean of the ``k``-th smallest of ``n`` i.i.d. exponentials with rate ``lam``."""
    if not (1 <= k <= n):
        raise DomainError(f"need 1 <= k <= n, got k={k}, n={n}")
    _check_positive(lam=lam)
    return harmonic_sum(n - k + 1, n) / lam


def _subset_sums(rates: np.ndarray) -> np.ndarray:
    # index bit i <-> edge i
    sums = np.zeros(1)
    for r in rates:
        sums = np.concatenate([sums, sums + r])
    return sums


def _race_exact(k: int, rates: np.ndarray, s: float) -> tuple[float, float]:
    """``(int_0^inf P(X_(k) > t) exp(-s t) dt, E[exp(-s X_(k))])`` by enumerating fired-edge sets.

    The fired set evolves as a Markov chain: from set ``B`` the next edge ``i``
    fires with probability ``r_i / (R_rest + s)`` before the killing clock
    ``s``, and the chain sojourns ``1 / (R_rest + s)`` on average.  Summing the
    sojourns over the sets with fewer than ``k`` fired edges gives the
    transform, and the mass reaching ``k`` fired edges is the probability of
    beating the killing clock.  Every term is positive, so nothing cancels.
    """
    n_edges = len(rates)
    masks = np.arange(1 << n_edges, dtype=np.int64)
    fired = np.bitwise_count(masks)
    rest = rates.sum() - _subset_sums(rates)
    reach = np.zeros(len(masks))
    reach[0] = 1.0
    total = 0.0
    for count in range(k):
        layer = masks[fired == count]
        p = reach[layer]
        denom = rest[layer] + s
        total += float(np.sum(p / denom))
        for i in range(n_edges):
            free = ((layer >> i) & 1) == 0
            reach[layer[free] | (1 << i)] += p[free] * rates[i] / denom[free]
    return total, float(reach[fired == k].sum())


def _order_survival(k: int, rates: np.ndarray, t: float) -> float:
    # P(fewer than k of the clocks have fired by t), Poisson-binomial recursion
    fired = -np.expm1(-rates * t)
    dist = np.zeros(k)
    dist[0] = 1.0
    for p in fired:
        dist[1:] = dist[1:] * (1.0 - p) + dist[:-1] * p
        dist[0] *= 1.0 - p
    return float(dist.sum())


def _survival_transform_quad(k: int, rates: np.ndarray, s: float) -> float:
    value, _ = integrate.quad(
        lambda t: _order_survival(k, rates, t) * math.exp(-s * t),
        0.0,
        math.inf,
        epsabs=QUAD_EPSABS,
        epsrel=1e-12,
        limit=500,
    )
    return value


def _race(k: int, rates: Sequence[float], s: float = 0.0) -> tuple[float, float]:
    arr = np.asarray(rates, dtype=float)
    if arr.ndim != 1 or len(arr) == 0:
        raise DomainError("need a nonempty list of edge rates")
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise DomainError("edge rates must be positive and finite")
    if not (1 <= k <= len(arr)):
        raise DomainError(f"need 1 <= k <= number of edges, got k={k}, edges={len(arr)}")
    if len(arr) <= MAX_SUBSET_EDGES:
        return _race_exact(k, arr, s)
    transform = _survival_transform_quad(k, arr, s)
    # integration by parts: E[exp(-s X)] = 1 - s * int S(t) exp(-s t) dt
    return transform, 1.0 - s * transform


def order_stat_mean(k: int, rates: Sequence[float]) -> float:
    """Mean of the ``k``-th smallest of independent exponentials with the given rates."""
    return _race(k, rates, 0.0)[0]


def expected_min_order_stat(k: int, rates: Sequence[float], lambda_s: float) -> float:
    """``E[min(X_(k), U)]`` with ``U ~ Exp(lambda_s)`` independent of the edge clocks."""
    _check_positive(lambda_s=lambda_s)
    return _race(k, rates, lambda_s)[0]


def prob_order_stat_before(k: int, rates: Sequence[float], lambda_s: float) -> float:
    """``P(X_(k) <= U)``, i.e. the Laplace transform of ``X_(k)`` at ``lambda_s``."""
    _check_positive(lambda_s=lambda_s)
    return _race(k, rates, lambda_s)[1]


def _is_homogeneous(rates: Sequence[float]) -> bool:
    arr = np.asarray(rates, dtype=float)
    return len(arr) > 0 and bool(np.all(arr == arr[0]))


# ---------------------------------------------------------------------------
# memory scheme
# ---------------------------------------------------------------------------


def age_memory_full(k: int, n_j: int, rates: Sequence[float], lambda_s: float) -> AnalyticResult:
    """Version age of a node with memory that needs ``k`` keys from ``n_j`` in-neighbours.

    Every in-neighbour holds a fresh key for each update (full subscription), so
    each version is served after the ``k``-th first-activation among the
    in-edges and the age is that service time measured in source periods.
    """
    _check_positive(lambda_s=lambda_s)
    if len(rates) != n_j:
        raise DomainError(f"expected {n_j} edge rates, got {len(rates)}")
    if k > n_j or k < 0:
        raise DomainError(f"need 0 <= k <= n_j, got k={k}, n_j={n_j}")
    if k == 0:
        return AnalyticResult(0.0, Source.MEMORY_FULL)
    if _is_homogeneous(rates):
        mean = exp_order_stat_mean(k, n_j, float(rates[0]))
    else:
        mean = order_stat_mean(k, rates)
    return AnalyticResult(mean * lambda_s, Source.MEMORY_FULL)


def age_memory_total_key(
    k: int, n: int, m: int, lambda_s: float, lambda_e: float, node_class: Union[NodeClass, str]
) -> AnalyticResult:
    """Memory-scheme age when exactly the ``n`` subscribers receive keys (``s = n``).

    Subscribers wait for ``k`` of the other ``n - 1`` key holders, nonsubscribers
    for ``k + 1`` of all ``n``.
    """
    node_class = NodeClass.parse(node_class)
    _check_positive(lambda_s=lambda_s, lambda_e=lambda_e)
    if not (0 <= k < n <= m) or m < 2:
        raise DomainError(f"need 0 <= k < n <= m and m >= 2, got k={k}, n={n}, m={m}")
    scale = (m - 1) * lambda_s / lambda_e
    if node_class is NodeClass.SUBSCRIBER:
        return AnalyticResult(scale * harmonic_sum(n - k, n - 1), Source.MEMORY_TOTAL_SUBSCRIBER)
    return AnalyticResult(scale * harmonic_sum(n - k, n), Source.MEMORY_TOTAL_NONSUBSCRIBER)


def memory_graph_age(k: int, n: int, s: int, m: int, lambda_s: float, lambda_e: float) -> AnalyticResult:
    """Graph-average memory age for full or total-key subscription (``s = n``)."""
    if s != n:
        raise DomainError("memory-scheme graph age has a closed form only when s = n")
    sub = age_memory_total_key(k, n, m, lambda_s, lambda_e, NodeClass.SUBSCRIBER).value
    if m == n:
        return AnalyticResult(sub, Source.GRAPH_AVERAGE)
    nonsub = age_memory_total_key(k, n, m, lambda_s, lambda_e, NodeClass.NONSUBSCRIBER).value
    return graph_average(sub, nonsub, s, m)


def asymptote_memory(k: int, alpha: float, lambda_s: float, lambda_e: float) -> float:
    """Large-network limit of the memory graph age with ``n = floor(alpha m)`` keys."""
    _check_alpha(alpha)
    _check_positive(lambda_s=lambda_s, lambda_e=lambda_e)
    return lambda_s * (k + 1 - alpha) / (alpha * lambda_e)


def bounds_memory_partial(k: int, n: int, s: int, m: int, lambda_s: float, lambda_e: float) -> BoundPair:
    """Lower/upper bounds on the memory graph age under partial key subscription.

    The lower bound is the full-subscription age on ``m`` nodes, the upper bound
    the total-key nonsubscriber age.
    """
    _check_positive(lambda_s=lambda_s, lambda_e=lambda_e)
    if not (0 <= k < n) or not (0 <= s <= n <= m) or m < 2:
        raise DomainError(f"need 0 <= k < n and s <= n <= m, got k={k}, n={n}, s={s}, m={m}")
    scale = (m - 1) * lambda_s / lambda_e
    return BoundPair(scale * harmonic_sum(m - k, m - 1), scale * harmonic_sum(n - k, n))


def relative_gap_bound(k: int, n: int, m: int) -> float:
    """Upper bound on ``(U_B - L_B) / L_B`` for the partial-key memory bounds."""
    if k < 1:
        raise DomainError("the normalized gap is undefined for k = 0")
    if not (k < n <= m):
        raise DomainError(f"need k < n <= m, got k={k}, n={n}, m={m}")
    return ((m - n) * k + m - 1 - k + k * k) / ((n - k) * k)


def asymptotic_relative_gap(k: int, alpha: float) -> float:
    if k < 1:
        raise DomainError("the normalized gap is undefined for k = 0")
    _check_alpha(alpha)
    return (k - alpha * k + 1) / (alpha * k)


def asymptote_bounds_memory_partial(k: int, alpha: float, lambda_s: float, lambda_e: float) -> BoundPair:
    _check_alpha(alpha)
    _check_positive(lambda_s=lambda_s, lambda_e=lambda_e)
    if k < 0:
        raise DomainError(f"need k >= 0, got {k}")
    return BoundPair(
        k * lambda_s / lambda_e,
        (k + 1) * lambda_s / (alpha * lambda_e),
        Source.MEMORY_PARTIAL_ASYMPTOTE_BOUNDS,
    )


# ---------------------------------------------------------------------------
# memoryless scheme
# ---------------------------------------------------------------------------


def coeff_B(n: int, m: int, i: int) -> float:
    if m < 2:
        raise DomainError("coeff_B needs m >= 2")
    if not (1 <= i < n):
        raise DomainError(f"coeff_B needs 1 <= i < n, got i={i}, n={n}")
    return (n - i) / (m - 1)


def coeff_A(n: int, m: int, j: int, lambda_s: float, lambda_e: float) -> float:
    """Probability that the first ``j`` of ``n - 1`` homogeneous senders all beat the next update.

    The factors stay bounded away from zero because ``j < n``, so the product is
    taken directly in linear space.
    """
    if not (0 <= j < n):
        raise DomainError(f"coeff_A needs 0 <= j < n, got j={j}, n={n}")
    _check_positive(lambda_s=lambda_s, lambda_e=lambda_e)
    prod = 1.0
    for i in range(1, j + 1):
        rate = lambda_e * coeff_B(n, m, i)
        prod *= rate / (rate + lambda_s)
    return prod


def _check_prop_args(k_t: int, n_t: int, m: int) -> None:
    if not (1 <= k_t < n_t):
        raise DomainError(f"need 1 <= k_t < n_t, got k_t={k_t}, n_t={n_t}")
    if m < 2:
        raise DomainError("need m >= 2")


def expected_min_orderstat_update(k_t: int, n_t: int, m: int, lambda_s: float, lambda_e: float) -> float:
    """``E[min(X_(k_t : n_t - 1), U)]`` for ``n_t - 1`` senders at rate ``lambda_e / (m - 1)``.

    The spacings of the order statistics are independent exponentials, so the
    race against ``U`` restarts after each key with one fewer competing sender.
    """
    _check_prop_args(k_t, n_t, m)
    _check_positive(lambda_s=lambda_s, lambda_e=lambda_e)
    total = 0.0
    survive = 1.0  # coeff_A(n_t, m, j - 1), accumulated in the loop
    for j in range(1, k_t + 1):
        rate = lambda_e * coeff_B(n_t, m, j)
        total += survive / (rate + lambda_s)
        survive *= rate / (rate + lambda_s)
    return total


def prob_decode_before_update(k_t: int, n_t: int, m: int, lambda_s: float, lambda_e: float) -> float:
    """``P(X_(k_t : n_t - 1) <= U)``."""
    _check_prop_args(k_t, n_t, m)
    return coeff_A(n_t, m, k_t, lambda_s, lambda_e)


def age_memoryless_full(k: int, n_j: int, lambda_s: float, rates: Sequence[float]) -> AnalyticResult:
    """Age of a memoryless node needing ``k`` keys from ``n_j`` in-neighbours, all key holders.

    A version is either decoded before the next update or missed for good, so
    the post-update age is a success run and the time-average age is
    ``E[min(X, U)] / (P(X <= U) E[U])``.
    """
    _check_positive(lambda_s=lambda_s)
    if len(rates) != n_j:
        raise DomainError(f"expected {n_j} edge rates, got {len(rates)}")
    if k > n_j or k < 0:
        raise DomainError(f"need 0 <= k <= n_j, got k={k}, n_j={n_j}")
    if k == 0:
        return AnalyticResult(0.0, Source.MEMORYLESS_FULL)
    if _is_homogeneous(rates):
        # one edge of rate r is lambda_e * B with m = 2, lambda_e = r
        num = expected_min_orderstat_update(k, n_j + 1, 2, lambda_s, float(rates[0]))
        prob = prob_decode_before_update(k, n_j + 1, 2, lambda_s, float(rates[0]))
    else:
        num, prob = _race(k, rates, lambda_s)
    return AnalyticResult(lambda_s * num / prob, Source.MEMORYLESS_FULL)


def age_memoryless_partial(
    k: int,
    n: int,
    s: int,
    m: int,
    lambda_s: float,
    lambda_e: float,
    node_class: Union[NodeClass, str],
) -> AnalyticResult:
    """Memoryless per-class age on a homogeneous network with ``s`` subscribers.

    A nonsubscriber is a key holder for an update with probability
    ``(n - s) / (m - s)``; it then needs ``k`` of ``n - 1`` keys, otherwise
    ``k + 1`` of ``n``.  Each update is an independent trial, so the age is the
    ratio of the mixed expected cycle lengths to the mixed success probability.
    """
    node_class = NodeClass.parse(node_class)
    _check_positive(lambda_s=lambda_s, lambda_e=lambda_e)
    if not (0 <= k < n) or not (0 <= s <= n <= m) or m < 2:
        raise DomainError(f"need 0 <= k < n and s <= n <= m, got k={k}, n={n}, s={s}, m={m}")

    def holder() -> tuple[float, float]:
        if k == 0:
            return 0.0, 1.0
        return (
            expected_min_orderstat_update(k, n, m, lambda_s, lambda_e),
            prob_decode_before_update(k, n, m, lambda_s, lambda_e),
        )

    if node_class is NodeClass.SUBSCRIBER:
        num, prob = holder()
        return AnalyticResult(lambda_s * num / prob, Source.MEMORYLESS_SUBSCRIBER)

    if m == s:
        raise DomainError("no nonsubscriber nodes when s = m")
    w_holder = n - s
    w_other = m - n
    num_h, prob_h = holder() if w_holder else (0.0, 0.0)
    if w_other:
        num_o = expected_min_orderstat_update(k + 1, n + 1, m, lambda_s, lambda_e)
        prob_o = prob_decode_before_update(k + 1, n + 1, m, lambda_s, lambda_e)
    else:
        num_o, prob_o = 0.0, 0.0
    value = lambda_s * (w_holder * num_h + w_other * num_o) / (w_holder * prob_h + w_other * prob_o)
    return AnalyticResult(value, Source.MEMORYLESS_NONSUBSCRIBER)


def memoryless_graph_age(k: int, n: int, s: int, m: int, lambda_s: float, lambda_e: float) -> AnalyticResult:
    sub = age_memoryless_partial(k, n, s, m, lambda_s, lambda_e, NodeClass.SUBSCRIBER).value
    if s == m:
        return AnalyticResult(sub, Source.GRAPH_AVERAGE)
    nonsub = age_memoryless_partial(k, n, s, m, lambda_s, lambda_e, NodeClass.NONSUBSCRIBER).value
    return graph_average(sub, nonsub, s, m)


def graph_average(age_sub: float, age_nonsub: float, s: int, m: int) -> AnalyticResult:
    """Node-weighted average of the subscriber and nonsubscriber ages."""
    if not (0 <= s <= m) or m < 1:
        raise DomainError(f"need 0 <= s <= m, got s={s}, m={m}")
    if s == m:
        return AnalyticResult(float(age_sub), Source.GRAPH_AVERAGE)
    if s == 0:
        return AnalyticResult(float(age_nonsub), Source.GRAPH_AVERAGE)
    return AnalyticResult((s / m) * age_sub + ((m - s) / m) * age_nonsub, Source.GRAPH_AVERAGE)


def asymptote_memoryless(k: int, alpha: float, lambda_s: float, lambda_e: float, which: str = "graph") -> float:
    """Large-network limit of the memoryless total-key ages with ``n = floor(alpha m)``.

    ``which`` is ``"subscriber"``, ``"nonsubscriber"`` or ``"graph"``.
    """
    _check_alpha(alpha)
    _check_positive(lambda_s=lambda_s, lambda_e=lambda_e)
    q = 1.0 + lambda_s / (alpha * lambda_e)
    which = which.lower()
    if which == "subscriber":
        return q**k - 1.0
    if which == "nonsubscriber":
        return q ** (k + 1) - 1.0
    if which == "graph":
        return q**k * ((lambda_s + alpha * (lambda_e - lambda_s)) / (alpha * lambda_e)) - 1.0
    raise DomainError(f"unknown asymptote kind {which!r}")


# ---------------------------------------------------------------------------
# memory critical gossip rate
# ---------------------------------------------------------------------------

BRACKET_LOW = 1e-6
BRACKET_FLOOR = 1e-15
BRACKET_CAP = 1e9
RATE_RTOL = 1e-6
_SCAN_POINTS = 65


def memory_gap(k: int, n: int, s: int, m: int, lambda_s: float, lambda_e: float) -> float:
    """``|memory graph age - memoryless graph age|``; the memory side is the upper bound if ``s < n``."""
    if s == n:
        mem = memory_graph_age(k, n, s, m, lambda_s, lambda_e).value
    else:
        mem = bounds_memory_partial(k, n, s, m, lambda_s, lambda_e).upper
    with np.errstate(all="ignore"):
        try:
            ml = memoryless_graph_age(k, n, s, m, lambda_s, lambda_e).value
        except ZeroDivisionError:
            return math.inf
    if not math.isfinite(ml):
        return math.inf
    return abs(mem - ml)


def critical_gossip_rate(q: CriticalRateQuery) -> CriticalRate:
    """Smallest gossip rate at which memory and memoryless graph ages differ by at most ``epsilon``.

    Brackets the root of ``gap(lambda_e) - epsilon`` by doubling from
    ``lambda_s``, checks on a log grid that the gap is nonincreasing over the
    bracket, then bisects in log space.  The returned rate always satisfies
    ``gap <= epsilon``.
    """
    if not (math.isfinite(q.epsilon) and q.epsilon > 0):
        raise DomainError(f"epsilon must be positive, got {q.epsilon!r}")
    _check_positive(lambda_s=q.lambda_s)
    if not (0 <= q.k < q.n) or not (0 <= q.s <= q.n <= q.m) or q.m < 2:
        raise DomainError(f"invalid counts k={q.k}, n={q.n}, s={q.s}, m={q.m}")
    partial = q.s < q.n

    def gap(rate: float) -> float:
        return memory_gap(q.k, q.n, q.s, q.m, q.lambda_s, rate)

    def excess(rate: float) -> float:
        return gap(rate) - q.epsilon

    lo = BRACKET_LOW * q.lambda_s
    if excess(lo) <= 0:
        while lo > BRACKET_FLOOR * q.lambda_s and excess(lo) <= 0:
            lo /= 10.0
        if excess(lo) <= 0:
            return CriticalRate(0.0, gap(lo), partial)

    hi = q.lambda_s
    while excess(hi) > 0:
        hi *= 2.0
        if hi > BRACKET_CAP * q.lambda_s:
            raise NoBracket(
                f"gap still above epsilon={q.epsilon} at lambda_e = {BRACKET_CAP:g} * lambda_s"
            )
    if hi > q.lambda_s and lo < hi / 2.0:
        lo = max(lo, hi / 2.0)

    grid = np.geomspace(lo, hi, _SCAN_POINTS)
    gaps = np.array([gap(x) for x in grid])
    finite = np.isfinite(gaps)
    steps = np.diff(gaps[finite])
    if np.any(finite[:-1] & ~finite[1:]) or np.any(steps > 1e-9 * np.abs(gaps[finite][:-1]) + 1e-300):
        raise NotMonotone("memory/memoryless gap is not nonincreasing over the bracket")

    while hi / lo > 1.0 + RATE_RTOL / 10.0:
        mid = math.sqrt(lo * hi)
        if excess(mid) <= 0:
            hi = mid
        else:
            lo = mid
    return CriticalRate(hi, gap(hi), partial)
