"""Parameter sweeps comparing simulation with the closed forms, plus derived studies."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

from . import analytic
from .analytic import BoundPair, CriticalRateQuery
from .config_io import SweepSpec
from .model import NodeClass, Scheme, homogeneous
from .simulator import Horizon, SimStats, replication_seed, run_replications

__all__ = [
    "AuditEntry",
    "AuditReport",
    "ComparisonRow",
    "SweepSpec",
    "analytic_for",
    "audit_bounds",
    "check_orderings",
    "convergence_study",
    "memory_value_study",
    "run_sweep",
    "run_table",
    "subscription_cost_study",
]

# point-value relative-error tolerance for closed forms vs. simulation
REL_TOL = 0.03
CI_SLACK = 3.0


@dataclass(frozen=True)
class ComparisonRow:
    scheme: str
    k: int
    n: int
    s: int
    m: int
    lambda_s: float
    lambda_e: float
    node_class: str
    analytic_value: Optional[float] = None
    bounds: Optional[BoundPair] = None
    sim_mean: Optional[float] = None
    sim_ci_half: Optional[float] = None
    seed: Optional[int] = None
    horizon_updates: Optional[int] = None
    source: str = ""

    @property
    def lower_bound(self) -> Optional[float]:
        return None if self.bounds is None else self.bounds.lower

    @property
    def upper_bound(self) -> Optional[float]:
        return None if self.bounds is None else self.bounds.upper

    @property
    def rel_error(self) -> Optional[float]:
        """Signed ``(sim - analytic) / analytic``; only for point values with a simulation."""
        if self.analytic_value is None or self.sim_mean is None:
            return None
        if self.analytic_value == 0.0:
            return 0.0 if self.sim_mean == 0.0 else None
        return (self.sim_mean - self.analytic_value) / self.analytic_value

    @property
    def contained(self) -> Optional[bool]:
        if self.bounds is None or self.sim_mean is None:
            return None
        return self.bounds.contains(self.sim_mean)

    def as_record(self) -> dict:
        return {
            "scheme": self.scheme,
            "k": self.k,
            "n": self.n,
            "s": self.s,
            "m": self.m,
            "lambda_s": self.lambda_s,
            "lambda_e": self.lambda_e,
            "node_class": self.node_class,
            "analytic_value": self.analytic_value,
            "lower_bound": self.lower_bound,
            "upper_bound": self.upper_bound,
            "sim_mean": self.sim_mean,
            "sim_ci_half": self.sim_ci_half,
            "rel_error": self.rel_error,
            "seed": self.seed,
            "horizon_updates": self.horizon_updates,
        }


def node_classes(s: int, m: int) -> list[str]:
    out = []
    if s > 0:
        out.append("subscriber")
    if s < m:
        out.append("nonsubscriber")
    out.append("graph")
    return out


def analytic_for(scheme: str, k: int, n: int, s: int, m: int, lambda_s: float, lambda_e: float, node_class: str):
    """Closed-form value (AnalyticResult) or bounds (BoundPair) for one class.

    Memory-scheme partial-key networks only have bounds; they are proven for
    the graph average and reported for the classes as a soft reference.
    """
    if Scheme.parse(scheme) is Scheme.MEMORY:
        if s < n:
            return analytic.bounds_memory_partial(k, n, s, m, lambda_s, lambda_e)
        if node_class == "graph":
            return analytic.memory_graph_age(k, n, s, m, lambda_s, lambda_e)
        return analytic.age_memory_total_key(k, n, m, lambda_s, lambda_e, node_class)
    if node_class == "graph":
        return analytic.memoryless_graph_age(k, n, s, m, lambda_s, lambda_e)
    return analytic.age_memoryless_partial(k, n, s, m, lambda_s, lambda_e, node_class)


def _horizon(spec: SweepSpec) -> Horizon:
    return Horizon(updates=spec.updates) if spec.time is None else Horizon(time=spec.time)


def _point_params(params: dict) -> tuple:
    try:
        return (
            int(params["k"]),
            int(params["n"]),
            int(params["s"]),
            int(params["m"]),
            float(params["lambda_s"]),
            float(params["lambda_e"]),
        )
    except KeyError as exc:
        raise ValueError(f"grid point is missing {exc.args[0]!r}: {params}") from None


def run_sweep(
    spec: SweepSpec,
    threads: Optional[int] = None,
    progress: Optional[Callable[[int, int], None]] = None,
) -> list[ComparisonRow]:
    """One row per (grid point, scheme, node class), in grid order.

    Point ``p`` simulates with seed ``replication_seed(spec.seed, p)`` for
    every scheme, so schemes are compared on common random numbers.
    """
    if spec.kind != "comparison":
        raise ValueError(f"run_sweep handles comparison sweeps, not {spec.kind!r}")
    points = spec.points()
    horizon = _horizon(spec)
    rows: list[ComparisonRow] = []
    for p, params in enumerate(points):
        k, n, s, m, lambda_s, lambda_e = _point_params(params)
        point_seed = replication_seed(spec.seed, p)
        for scheme in spec.schemes:
            cfg = homogeneous(k, n, s, m, lambda_s, lambda_e, scheme)
            stats: Optional[SimStats] = None
            if spec.simulate:
                stats = run_replications(cfg, horizon, point_seed, spec.replications, threads)
            for node_class in node_classes(s, m):
                ref = analytic_for(scheme, k, n, s, m, lambda_s, lambda_e, node_class)
                is_bound = isinstance(ref, BoundPair)
                rows.append(
                    ComparisonRow(
                        scheme=cfg.scheme.value,
                        k=k,
                        n=n,
                        s=s,
                        m=m,
                        lambda_s=lambda_s,
                        lambda_e=lambda_e,
                        node_class=node_class,
                        analytic_value=None if is_bound else ref.value,
                        bounds=ref if is_bound else None,
                        sim_mean=None if stats is None else stats.classes[node_class].mean,
                        sim_ci_half=None if stats is None else stats.classes[node_class].ci_half,
                        seed=point_seed if spec.simulate else None,
                        horizon_updates=spec.updates if spec.simulate else None,
                        source=ref.source.value,
                    )
                )
        if progress is not None:
            progress(p + 1, len(points))
    return rows


# --- bound audit ------------------------------------------------------------

CONTAINED = "contained"
OVERLAP = "violated_within_ci"
VIOLATED = "violated"


@dataclass(frozen=True)
class AuditEntry:
    row: ComparisonRow
    status: str
    # graph-average rows are hard checks, class rows are advisory
    hard: bool
    distance: float


@dataclass
class AuditReport:
    entries: list = field(default_factory=list)

    @property
    def hard_violations(self) -> list:
        return [e for e in self.entries if e.hard and e.status == VIOLATED]

    @property
    def warnings(self) -> list:
        return [e for e in self.entries if e.status != CONTAINED and not (e.hard and e.status == VIOLATED)]

    @property
    def passed(self) -> bool:
        return not self.hard_violations

    def summary(self) -> str:
        counts = {CONTAINED: 0, OVERLAP: 0, VIOLATED: 0}
        for e in self.entries:
            counts[e.status] += 1
        verdict = "pass" if self.passed else "FAIL"
        return (
            f"bound audit {verdict}: {len(self.entries)} rows, {counts[CONTAINED]} contained, "
            f"{counts[OVERLAP]} outside but within {CI_SLACK:g} CI half-widths, {counts[VIOLATED]} violated "
            f"({len(self.hard_violations)} on graph averages)"
        )


def classify_bound(sim: float, ci_half: Optional[float], bounds: BoundPair, slack: float = CI_SLACK) -> tuple[str, float]:
    if bounds.contains(sim):
        return CONTAINED, 0.0
    distance = bounds.lower - sim if sim < bounds.lower else sim - bounds.upper
    half = 0.0 if ci_half is None or math.isnan(ci_half) else ci_half
    return (OVERLAP if distance <= slack * half else VIOLATED), distance


def audit_bounds(rows: Iterable[ComparisonRow], slack: float = CI_SLACK) -> AuditReport:
    """Classify every simulated bound row as contained, within ``slack`` CI half-widths, or violated."""
    report = AuditReport()
    for row in rows:
        if row.bounds is None or row.sim_mean is None:
            continue
        status, distance = classify_bound(row.sim_mean, row.sim_ci_half, row.bounds, slack)
        report.entries.append(AuditEntry(row, status, row.node_class == "graph", distance))
    return report


def check_orderings(rows: Iterable[ComparisonRow], slack: float = CI_SLACK) -> list[str]:
    """Memoryless >= memory and subscriber <= nonsubscriber at matched points.

    Simulated means get ``slack`` combined CI half-widths of tolerance.
    Returns human-readable descriptions of every failure.
    """
    rows = list(rows)
    by_key = {(r.scheme, r.k, r.n, r.s, r.m, r.lambda_s, r.lambda_e, r.node_class): r for r in rows}
    problems = []

    def value(r: ComparisonRow) -> Optional[float]:
        return r.analytic_value

    def tol(a: ComparisonRow, b: ComparisonRow) -> float:
        ha = a.sim_ci_half or 0.0
        hb = b.sim_ci_half or 0.0
        return slack * math.hypot(0.0 if math.isnan(ha) else ha, 0.0 if math.isnan(hb) else hb)

    for key, row in by_key.items():
        scheme, *point, node_class = key
        if scheme == "memoryless":
            mem = by_key.get(("memory", *point, node_class))
            if mem is not None:
                if value(mem) is not None and value(row) is not None and value(row) < value(mem):
                    problems.append(f"analytic memoryless < memory at {tuple(point)} {node_class}")
                if (
                    mem.sim_mean is not None
                    and row.sim_mean is not None
                    and row.sim_mean < mem.sim_mean - tol(mem, row)
                ):
                    problems.append(f"simulated memoryless < memory at {tuple(point)} {node_class}")
        if node_class == "subscriber":
            other = by_key.get((scheme, *point, "nonsubscriber"))
            if other is not None:
                if value(row) is not None and value(other) is not None and value(row) > value(other):
                    problems.append(f"analytic subscriber > nonsubscriber at {scheme} {tuple(point)}")
                if (
                    row.sim_mean is not None
                    and other.sim_mean is not None
                    and row.sim_mean > other.sim_mean + tol(row, other)
                ):
                    problems.append(f"simulated subscriber > nonsubscriber at {scheme} {tuple(point)}")
    return problems


# --- studies ----------------------------------------------------------------


@dataclass(frozen=True)
class ConvergencePoint:
    m: int
    n: int
    analytic: float
    asymptote: float
    sim_mean: Optional[float] = None
    sim_ci_half: Optional[float] = None

    @property
    def gap(self) -> float:
        return abs(self.analytic - self.asymptote)


@dataclass
class ConvergenceTable:
    scheme: str
    rows: list

    @property
    def shrinking(self) -> bool:
        """Gap to the asymptote is nonincreasing over the last three sizes."""
        tail = [r.gap for r in self.rows[-3:]]
        return all(b <= a for a, b in zip(tail, tail[1:]))


def convergence_study(
    alpha: float,
    k: int,
    lambda_s: float,
    lambda_e: float,
    m_values: Iterable[int],
    scheme: str = "memory",
    simulate: bool = False,
    updates: int = 10_000,
    replications: int = 4,
    seed: int = 0,
) -> ConvergenceTable:
    """Finite-size graph age against its large-network limit with ``n = s = floor(alpha m)``."""
    m_values = [int(m) for m in m_values]
    if any(b <= a for a, b in zip(m_values, m_values[1:])):
        raise ValueError("m values must be strictly increasing")
    scheme = Scheme.parse(scheme).value
    rows = []
    for idx, m in enumerate(m_values):
        n = math.floor(alpha * m)
        if n < k + 1:
            raise ValueError(f"n = floor({alpha} * {m}) = {n} is below k + 1 = {k + 1}")
        if scheme == "memory":
            value = analytic.memory_graph_age(k, n, n, m, lambda_s, lambda_e).value
            limit = analytic.asymptote_memory(k, alpha, lambda_s, lambda_e)
        else:
            value = analytic.memoryless_graph_age(k, n, n, m, lambda_s, lambda_e).value
            limit = analytic.asymptote_memoryless(k, alpha, lambda_s, lambda_e, "graph")
        sim_mean = sim_half = None
        if simulate:
            stats = run_replications(
                homogeneous(k, n, n, m, lambda_s, lambda_e, scheme),
                Horizon(updates=updates),
                replication_seed(seed, idx),
                replications,
            )
            sim_mean, sim_half = stats.graph_mean, stats.classes["graph"].ci_half
        rows.append(ConvergencePoint(m, n, value, limit, sim_mean, sim_half))
    return ConvergenceTable(scheme, rows)


@dataclass(frozen=True)
class CriticalRateRow:
    k: int
    n: int
    epsilon: float
    rate: float
    gap: float
    # gap at 0.99 times the returned rate; must exceed epsilon
    gap_below: float

    @property
    def ok(self) -> bool:
        return self.gap <= self.epsilon and (self.rate == 0.0 or self.gap_below > self.epsilon)


def memory_value_study(
    k_values: Iterable[int], n: int, lambda_s: float, epsilons: Iterable[float]
) -> list[CriticalRateRow]:
    """Memory critical gossip rate on full-subscription networks, ordered by ``k`` then ``epsilon``."""
    epsilons = list(epsilons)
    rows = []
    for k in sorted(int(k) for k in k_values):
        for eps in epsilons:
            res = analytic.critical_gossip_rate(CriticalRateQuery(k, n, n, n, lambda_s, eps))
            below = (
                math.inf
                if res.value == 0.0
                else analytic.memory_gap(k, n, n, n, lambda_s, 0.99 * res.value)
            )
            rows.append(CriticalRateRow(k, n, float(eps), res.value, res.gap, below))
    return rows


def critical_rate_problems(rows: list[CriticalRateRow]) -> list[str]:
    """Solver postconditions and the expected orderings in ``k`` and ``epsilon``."""
    problems = [f"k={r.k} eps={r.epsilon:g}: gap postcondition fails" for r in rows if not r.ok]
    table = {(r.k, r.epsilon): r.rate for r in rows}
    ks = sorted({r.k for r in rows})
    eps = sorted({r.epsilon for r in rows}, reverse=True)
    for e in eps:
        for a, b in zip(ks, ks[1:]):
            if not table[(b, e)] > table[(a, e)]:
                problems.append(f"eps={e:g}: rate not increasing from k={a} to k={b}")
    for k in ks:
        for a, b in zip(eps, eps[1:]):
            if not table[(k, b)] >= table[(k, a)]:
                problems.append(f"k={k}: rate decreases as eps goes {a:g} -> {b:g}")
    return problems


@dataclass(frozen=True)
class SubscriptionCostRow:
    m: int
    s: int
    subscriber: float
    nonsubscriber: Optional[float]
    graph: float


def subscription_cost_study(
    k: int, n: int, lambda_s: float, lambda_e: float, s_values: Iterable[int], m_values: Iterable[int]
) -> list[SubscriptionCostRow]:
    """Memoryless class ages as more of the ``n`` keys go to fixed subscribers."""
    rows = []
    for m in m_values:
        for s in s_values:
            sub = analytic.age_memoryless_partial(k, n, s, m, lambda_s, lambda_e, NodeClass.SUBSCRIBER).value
            nonsub = (
                None
                if s == m
                else analytic.age_memoryless_partial(k, n, s, m, lambda_s, lambda_e, NodeClass.NONSUBSCRIBER).value
            )
            graph = analytic.memoryless_graph_age(k, n, s, m, lambda_s, lambda_e).value
            rows.append(SubscriptionCostRow(int(m), int(s), sub, nonsub, graph))
    return rows


def subscription_cost_problems(rows: list[SubscriptionCostRow]) -> list[str]:
    problems = []
    by_m: dict = {}
    for r in rows:
        by_m.setdefault(r.m, []).append(r)
    for m, group in by_m.items():
        group = sorted(group, key=lambda r: r.s)
        if len({r.subscriber for r in group}) > 1:
            problems.append(f"m={m}: subscriber age varies with s")
        nonsub = [r.nonsubscriber for r in group if r.nonsubscriber is not None]
        if any(b <= a for a, b in zip(nonsub, nonsub[1:])):
            problems.append(f"m={m}: nonsubscriber age not strictly increasing in s")
    return problems


def run_table(spec: SweepSpec) -> tuple[list[dict], list[str]]:
    """Evaluate an analytic-only sweep (``critical_rate`` or ``subscription_cost``).

    Returns plain records in grid order and the list of failed checks.
    """
    points = spec.points()
    if spec.kind == "critical_rate":
        rows = []
        for params in points:
            q = CriticalRateQuery(
                int(params["k"]),
                int(params["n"]),
                int(params["s"]),
                int(params["m"]),
                float(params["lambda_s"]),
                float(params["epsilon"]),
            )
            res = analytic.critical_gossip_rate(q)
            below = math.inf if res.value == 0.0 else analytic.memory_gap(
                q.k, q.n, q.s, q.m, q.lambda_s, 0.99 * res.value
            )
            rows.append(
                {
                    "k": q.k,
                    "n": q.n,
                    "s": q.s,
                    "m": q.m,
                    "lambda_s": q.lambda_s,
                    "epsilon": q.epsilon,
                    "critical_rate": res.value,
                    "gap": res.gap,
                    "gap_at_99pct": below,
                    "upper_bound_only": res.upper_bound_only,
                }
            )
        crit = [
            CriticalRateRow(r["k"], r["n"], r["epsilon"], r["critical_rate"], r["gap"], r["gap_at_99pct"])
            for r in rows
        ]
        full = all(r["s"] == r["n"] == r["m"] for r in rows)
        same_n = len({r["n"] for r in rows}) == 1
        problems = critical_rate_problems(crit) if full and same_n else [
            f"k={c.k} eps={c.epsilon:g}: gap postcondition fails" for c in crit if not c.ok
        ]
        return rows, problems
    if spec.kind == "subscription_cost":
        rows = []
        for params in points:
            k, n, s, m, lambda_s, lambda_e = _point_params(params)
            (r,) = subscription_cost_study(k, n, lambda_s, lambda_e, [s], [m])
            rows.append(
                {
                    "k": k,
                    "n": n,
                    "s": s,
                    "m": m,
                    "lambda_s": lambda_s,
                    "lambda_e": lambda_e,
                    "subscriber": r.subscriber,
                    "nonsubscriber": r.nonsubscriber,
                    "graph": r.graph,
                }
            )
        cost = [SubscriptionCostRow(r["m"], r["s"], r["subscriber"], r["nonsubscriber"], r["graph"]) for r in rows]
        return rows, subscription_cost_problems(cost)
    raise ValueError(f"run_table does not handle {spec.kind!r} sweeps")
