"""Monte Carlo simulation of threshold-coded gossip and k-keys version age.

Each receiver's age is integrated exactly between events.  Statistics are
renewal-reward estimates: for every node, the cycles between consecutive
source updates at which its age becomes 1 are i.i.d., and the time average is
taken from its first such boundary to its last.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy import stats

from . import _kernel
from .model import Homogeneous, ValidatedConfig

N_BATCHES = 32
DEFAULT_UPDATES = 100_000
CLASSES = ("subscriber", "nonsubscriber", "graph")


class SimulationError(RuntimeError):
    pass


class HorizonTooShort(SimulationError):
    pass


@dataclass(frozen=True)
class Horizon:
    """Stop after ``updates`` source updates or at time ``time`` (exactly one is set)."""

    updates: Optional[int] = None
    time: Optional[float] = None

    def __post_init__(self) -> None:
        if (self.updates is None) == (self.time is None):
            raise ValueError("specify exactly one of updates or time")
        if self.updates is not None and self.updates < 1:
            raise ValueError(f"update horizon must be >= 1, got {self.updates}")
        if self.time is not None and not (self.time > 0 and math.isfinite(self.time)):
            raise ValueError(f"time horizon must be positive and finite, got {self.time}")

    def describe(self) -> dict:
        return {"updates": self.updates} if self.updates is not None else {"time": self.time}


def UpdateCount(n: int) -> Horizon:
    return Horizon(updates=int(n))


def Time(t: float) -> Horizon:
    return Horizon(time=float(t))


@dataclass(frozen=True)
class ClassStat:
    mean: float
    se: float
    ci_half: float
    dof: int


@dataclass
class SimStats:
    """Output of one simulation run (or of pooled replications)."""

    seed: int
    horizon: Horizon
    config: ValidatedConfig
    node_means: np.ndarray
    classes: dict
    updates: int
    end_time: float
    events: int
    decodes: int
    misses: int
    early_stops: int
    # per-node renewal records over completed cycles
    cycles: np.ndarray
    cycle_time: np.ndarray
    cycle_area: np.ndarray
    cycle_updates: np.ndarray
    cycle_updates_sq: np.ndarray
    window_time: np.ndarray
    window_area: np.ndarray
    replications: list = field(default_factory=list)

    def mean(self, node_class: str) -> Optional[float]:
        stat = self.classes.get(node_class)
        return None if stat is None else stat.mean

    def ci_half(self, node_class: str) -> Optional[float]:
        stat = self.classes.get(node_class)
        return None if stat is None else stat.ci_half

    @property
    def graph_mean(self) -> float:
        return self.classes["graph"].mean


def _alias_table(weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Walker/Vose alias table for sampling an index proportionally to ``weights``."""
    size = len(weights)
    scaled = weights * size / weights.sum()
    prob = np.ones(size)
    alias = np.arange(size)
    small = [i for i in range(size) if scaled[i] < 1.0]
    large = [i for i in range(size) if scaled[i] >= 1.0]
    while small and large:
        lo = small.pop()
        hi = large.pop()
        prob[lo] = scaled[lo]
        alias[lo] = hi
        scaled[hi] -= 1.0 - scaled[lo]
        (small if scaled[hi] < 1.0 else large).append(hi)
    return prob, alias


@dataclass(frozen=True)
class EventTables:
    """Precomputed event-selection tables shared by both engines."""

    total_rate: float
    homogeneous: bool
    edge_from: np.ndarray
    edge_to: np.ndarray
    alias_prob: np.ndarray
    alias_idx: np.ndarray


def event_tables(cfg: ValidatedConfig) -> EventTables:
    if isinstance(cfg.edge_rates, Homogeneous):
        empty_i = np.zeros(0, dtype=np.int64)
        return EventTables(
            cfg.lambda_s + cfg.m * cfg.edge_rates.lambda_e,
            True,
            empty_i,
            empty_i,
            np.zeros(0),
            empty_i,
        )
    mat = cfg.rate_matrix()
    src, dst = np.nonzero(mat)
    weights = mat[src, dst]
    prob, alias = _alias_table(weights)
    return EventTables(
        cfg.lambda_s + float(weights.sum()),
        False,
        src.astype(np.int64),
        dst.astype(np.int64),
        prob,
        alias.astype(np.int64),
    )


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed)))


def replication_seed(base_seed: int, r: int) -> int:
    """Seed of replication ``r``; a pure function of ``(base_seed, r)``."""
    words = np.random.SeedSequence([int(base_seed), int(r)]).generate_state(2, dtype=np.uint32)
    return int(words[0]) | (int(words[1]) << 32)


def _class_stat(batch_area: np.ndarray, batch_len: np.ndarray, mean: float) -> ClassStat:
    area = batch_area.sum(axis=0)
    length = batch_len.sum(axis=0)
    ok = length > 0
    estimates = area[ok] / length[ok]
    if len(estimates) < 2:
        return ClassStat(mean, math.nan, math.nan, 0)
    dof = len(estimates) - 1
    se = float(np.std(estimates, ddof=1) / math.sqrt(len(estimates)))
    return ClassStat(mean, se, float(stats.t.ppf(0.975, dof)) * se, dof)


def _class_indices(cfg: ValidatedConfig) -> dict:
    out = {}
    if cfg.s > 0:
        out["subscriber"] = np.arange(cfg.s)
    if cfg.s < cfg.m:
        out["nonsubscriber"] = np.arange(cfg.s, cfg.m)
    out["graph"] = np.arange(cfg.m)
    return out


ENGINES = ("compiled", "reference")


def _raw_run(cfg: ValidatedConfig, horizon: Horizon, seed: int, engine: str) -> tuple:
    max_updates = horizon.updates or 0
    t_end = math.inf if horizon.time is None else float(horizon.time)
    rng = make_rng(seed)
    if engine == "reference":
        from .reference import run_reference

        return run_reference(cfg, rng, max_updates, t_end, N_BATCHES).raw
    if engine != "compiled":
        raise ValueError(f"unknown engine {engine!r}; expected one of {ENGINES}")
    tables = event_tables(cfg)
    return _kernel.simulate(
        rng,
        cfg.k,
        cfg.n,
        cfg.s,
        cfg.m,
        _kernel.MEMORY if cfg.scheme.value == "memory" else _kernel.MEMORYLESS,
        float(cfg.lambda_s),
        float(tables.total_rate),
        tables.homogeneous,
        tables.edge_from,
        tables.edge_to,
        tables.alias_prob,
        tables.alias_idx,
        max_updates,
        t_end,
        N_BATCHES,
    )


def run_simulation(
    cfg: ValidatedConfig,
    horizon: Horizon = UpdateCount(DEFAULT_UPDATES),
    seed: int = 0,
    engine: str = "compiled",
) -> SimStats:
    """Simulate one sample path and summarise the per-node and per-class time-average ages.

    ``engine="reference"`` runs the pure-Python engine instead of the compiled
    one; both follow the same sample path for the same seed.

    Raises :class:`HorizonTooShort` if some node completes no renewal cycle.
    """
    if not isinstance(cfg, ValidatedConfig):
        raise TypeError("run_simulation needs a ValidatedConfig (see validate_config)")
    return summarize(cfg, horizon, seed, _raw_run(cfg, horizon, seed, engine))


def summarize(cfg: ValidatedConfig, horizon: Horizon, seed: int, raw: tuple) -> SimStats:
    (
        updates,
        end_time,
        events,
        _integral,
        first_t,
        first_i,
        bound_t,
        bound_i,
        cycles,
        sum_len,
        sum_area,
        sum_upd,
        sum_upd_sq,
        batch_len,
        batch_area,
        decodes,
        misses,
        early,
    ) = raw
    if np.any(cycles == 0):
        bad = int(np.argmin(cycles))
        raise HorizonTooShort(f"node {bad} completed no renewal cycle within {horizon.describe()}")
    window_time = bound_t - first_t
    window_area = bound_i - first_i
    node_means = window_area / window_time

    classes = {}
    idx = _class_indices(cfg)
    for name, nodes in idx.items():
        if name == "graph":
            continue
        classes[name] = _class_stat(batch_area[nodes], batch_len[nodes], float(node_means[nodes].mean()))
    sub = classes["subscriber"].mean if "subscriber" in classes else 0.0
    nonsub = classes["nonsubscriber"].mean if "nonsubscriber" in classes else 0.0
    graph = (cfg.s * sub + (cfg.m - cfg.s) * nonsub) / cfg.m
    classes["graph"] = _class_stat(batch_area, batch_len, graph)

    return SimStats(
        seed=int(seed),
        horizon=horizon,
        config=cfg,
        node_means=node_means,
        classes=classes,
        updates=int(updates),
        end_time=float(end_time),
        events=int(events),
        decodes=int(decodes.sum()),
        misses=int(misses.sum()),
        early_stops=int(early.sum()),
        cycles=cycles,
        cycle_time=sum_len,
        cycle_area=sum_area,
        cycle_updates=sum_upd,
        cycle_updates_sq=sum_upd_sq,
        window_time=window_time,
        window_area=window_area,
    )


def _threads() -> int:
    env = os.environ.get("AOI_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def pool(runs: list) -> SimStats:
    """Pool independent replications: mean of means, standard errors combined in quadrature."""
    if not runs:
        raise ValueError("nothing to pool")
    if len(runs) == 1:
        return runs[0]
    first = runs[0]
    count = len(runs)
    classes = {}
    for name in first.classes:
        means = [r.classes[name].mean for r in runs]
        ses = [r.classes[name].se for r in runs]
        dof = sum(r.classes[name].dof for r in runs)
        se = math.sqrt(sum(x * x for x in ses)) / count
        half = float(stats.t.ppf(0.975, dof)) * se if dof > 0 else math.nan
        classes[name] = ClassStat(float(np.mean(means)), se, half, dof)
    return SimStats(
        seed=first.seed,
        horizon=first.horizon,
        config=first.config,
        node_means=np.mean([r.node_means for r in runs], axis=0),
        classes=classes,
        updates=sum(r.updates for r in runs),
        end_time=sum(r.end_time for r in runs),
        events=sum(r.events for r in runs),
        decodes=sum(r.decodes for r in runs),
        misses=sum(r.misses for r in runs),
        early_stops=sum(r.early_stops for r in runs),
        cycles=sum(r.cycles for r in runs),
        cycle_time=sum(r.cycle_time for r in runs),
        cycle_area=sum(r.cycle_area for r in runs),
        cycle_updates=sum(r.cycle_updates for r in runs),
        cycle_updates_sq=sum(r.cycle_updates_sq for r in runs),
        window_time=sum(r.window_time for r in runs),
        window_area=sum(r.window_area for r in runs),
        replications=list(runs),
    )


def run_replications(
    cfg: ValidatedConfig,
    horizon: Horizon = UpdateCount(DEFAULT_UPDATES),
    base_seed: int = 0,
    count: int = 4,
    threads: Optional[int] = None,
) -> SimStats:
    """Run ``count`` independent replications and pool them.

    Replication ``r`` uses :func:`replication_seed` ``(base_seed, r)``; results
    do not depend on how many threads execute them.
    """
    if count < 1:
        raise ValueError(f"need at least one replication, got {count}")
    seeds = [replication_seed(base_seed, r) for r in range(count)]
    workers = min(count, threads or _threads())
    if workers == 1:
        runs = [run_simulation(cfg, horizon, sd) for sd in seeds]
    else:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            runs = list(ex.map(lambda sd: run_simulation(cfg, horizon, sd), seeds))
    return replace(pool(runs), seed=int(base_seed), replications=runs)
