"""Pure-Python protocol engine with explicit key bookkeeping.

This engine keeps every node's state in the form the protocol describes:
direct keys as :class:`KeyToken` objects, a per-outgoing-edge set of keys not
yet forwarded, and per-version sets of distinct key ids.  It is slow, but it
draws random numbers in exactly the same order as the compiled kernel, so
for the same seed both engines walk the same sample path.  Tests use it as a
differential oracle and :func:`trace_events` uses it to record trajectories.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .model import KeyToken, Scheme, ValidatedConfig

TRACE_EVENT_LIMIT = 10_000_000


class TraceTooLarge(RuntimeError):
    pass


@dataclass
class NodeState:
    direct_keys: set = field(default_factory=set)
    # outgoing neighbour -> direct keys not yet forwarded on that edge
    unsent: dict = field(default_factory=dict)
    per_version_keyids: dict = field(default_factory=dict)
    decoded_version: int = 0


@dataclass
class AgeAccumulator:
    current_age: int = 0
    integral: float = 0.0
    last_event_time: float = 0.0
    # (length, area, updates) of every completed renewal cycle
    cycle_stats: list = field(default_factory=list)
    decode_times: list = field(default_factory=list)

    def advance(self, t: float) -> None:
        self.integral += self.current_age * (t - self.last_event_time)
        self.last_event_time = t


@dataclass(frozen=True)
class DecodeRecord:
    node: int
    version: int
    key_count: int
    # older versions that were still short of keys when this decode happened
    early_stopped: tuple = ()


@dataclass(frozen=True)
class TraceEvent:
    time: float
    kind: str  # "update" or "gossip"
    version: int
    sender: int = -1
    receiver: int = -1
    keys_sent: int = 0
    ages_before: tuple = ()
    ages_after: tuple = ()
    decodes: tuple = ()
    # update events only: key holders and, per node, how many in-neighbours hold a key
    holders: tuple = ()
    gamma: tuple = ()


class _Recorder:
    """Renewal and batch bookkeeping; mirrors the compiled kernel statement for statement."""

    def __init__(self, m: int, n_batches: int):
        self.cyc_open = [False] * m
        self.cyc_t0 = [0.0] * m
        self.cyc_i0 = [0.0] * m
        self.cyc_v0 = [0] * m
        self.first_t = np.zeros(m)
        self.first_i = np.zeros(m)
        self.bound_t = np.zeros(m)
        self.bound_i = np.zeros(m)
        self.n_cycles = np.zeros(m, dtype=np.int64)
        self.sum_len = np.zeros(m)
        self.sum_area = np.zeros(m)
        self.sum_upd = np.zeros(m)
        self.sum_upd_sq = np.zeros(m)
        self.batch_len = np.zeros((m, n_batches))
        self.batch_area = np.zeros((m, n_batches))

    def boundary(self, j: int, acc: AgeAccumulator, t: float, version: int, batch: int) -> None:
        if self.cyc_open[j]:
            length = t - self.cyc_t0[j]
            area = acc.integral - self.cyc_i0[j]
            upd = version - self.cyc_v0[j]
            acc.cycle_stats.append((length, area, upd))
            self.n_cycles[j] += 1
            self.sum_len[j] += length
            self.sum_area[j] += area
            self.sum_upd[j] += upd
            self.sum_upd_sq[j] += upd * upd
            self.batch_len[j, batch] += length
            self.batch_area[j, batch] += area
        else:
            self.cyc_open[j] = True
            self.first_t[j] = t
            self.first_i[j] = acc.integral
        self.bound_t[j] = t
        self.bound_i[j] = acc.integral
        self.cyc_t0[j] = t
        self.cyc_i0[j] = acc.integral
        self.cyc_v0[j] = version


@dataclass
class ReferenceRun:
    """Final engine state plus the raw tallies the simulator summarises."""

    raw: tuple
    nodes: list
    ages: list
    trace: Optional[list]


def run_reference(
    cfg: ValidatedConfig,
    rng: np.random.Generator,
    max_updates: int,
    t_end: float,
    n_batches: int,
    *,
    forward_all: bool = False,
    trace: bool = False,
    event_limit: Optional[int] = None,
) -> ReferenceRun:
    """Run the protocol on explicit per-node state.

    ``forward_all`` makes a memory node send every direct key it still holds on
    each activation, leaving duplicates to the receiver, instead of only the
    keys not yet sent on that edge.  Both rules give the same sample path.
    """
    # local import: simulator imports this module for its engine switch
    from .simulator import event_tables

    k, n, s, m = cfg.k, cfg.n, cfg.s, cfg.m
    thr = k + 1
    memory = cfg.scheme is Scheme.MEMORY
    tables = event_tables(cfg)
    total_rate = tables.total_rate
    lambda_s = cfg.lambda_s
    rates = cfg.rate_matrix()
    out_nbrs = [[j for j in range(m) if rates[i, j] > 0] for i in range(m)]
    in_nbrs = [[i for i in range(m) if rates[i, j] > 0] for j in range(m)]

    nodes = [NodeState() for _ in range(m)]
    for i in range(m):
        nodes[i].unsent = {j: set() for j in out_nbrs[i]}
    ages = [AgeAccumulator() for _ in range(m)]
    rec = _Recorder(m, n_batches)
    decodes = np.zeros(m, dtype=np.int64)
    misses = np.zeros(m, dtype=np.int64)
    early = np.zeros(m, dtype=np.int64)
    # memory scheme: how many edges still owe each direct key (for collection)
    owed: dict = {}
    nonsub = list(range(s, m))
    log: Optional[list] = [] if trace else None

    version = 0
    t = 0.0
    n_events = 0

    def snapshot() -> tuple:
        return tuple(a.current_age for a in ages)

    def try_decode(j: int, now: float) -> Optional[DecodeRecord]:
        node = nodes[j]
        best = node.decoded_version
        for v, ids in node.per_version_keyids.items():
            if v > best and len(ids) >= thr:
                best = v
        if best <= node.decoded_version:
            return None
        pending = tuple(
            v
            for v in range(node.decoded_version + 1, best)
            if len(node.per_version_keyids.get(v, ())) < thr
        )
        if memory and pending:
            early[j] += 1
        count = len(node.per_version_keyids[best])
        ages[j].advance(now)
        node.decoded_version = best
        ages[j].current_age = version - best
        ages[j].decode_times.append((now, best))
        decodes[j] += 1
        for v in [v for v in node.per_version_keyids if v <= best]:
            del node.per_version_keyids[v]
        return DecodeRecord(j, best, count, pending if memory else ())

    while True:
        t += rng.standard_exponential() / total_rate
        if t > t_end:
            t = t_end
            break
        u = rng.random() * total_rate
        n_events += 1
        if event_limit is not None and n_events > event_limit:
            raise TraceTooLarge(f"trace exceeded {event_limit} events")
        if u < lambda_s:
            version += 1
            for idx in range(n - s):
                r = int(rng.integers(idx, m - s))
                nonsub[idx], nonsub[r] = nonsub[r], nonsub[idx]
            holders = list(range(s)) + nonsub[: n - s]

            if max_updates > 0:
                batch = ((version - 1) * n_batches) // max_updates
            else:
                batch = int(t * n_batches / t_end)
            batch = min(batch, n_batches - 1)

            before = snapshot() if trace else ()
            for j in range(m):
                acc = ages[j]
                acc.advance(t)
                if not memory and version > 1 and nodes[j].decoded_version < version - 1:
                    misses[j] += 1
                acc.current_age += 1
                if acc.current_age == 1:
                    rec.boundary(j, acc, t, version, batch)

            if not memory:
                for node in nodes:
                    node.direct_keys.clear()
                    for pending in node.unsent.values():
                        pending.clear()
                    node.per_version_keyids = {
                        v: ids for v, ids in node.per_version_keyids.items() if v >= version
                    }
            for key_id, h in enumerate(holders):
                token = KeyToken(version, key_id)
                node = nodes[h]
                node.direct_keys.add(token)
                for pending in node.unsent.values():
                    pending.add(token)
                if memory and not forward_all:
                    owed[(h, token)] = len(node.unsent)
                node.per_version_keyids.setdefault(version, set()).add(key_id)

            recs = []
            if thr == 1:
                for h in holders:
                    d = try_decode(h, t)
                    if d is not None:
                        recs.append(d)
            if trace:
                held = set(holders)
                gamma = tuple(sum(1 for i in in_nbrs[j] if i in held) for j in range(m))
                log.append(
                    TraceEvent(t, "update", version, ages_before=before, ages_after=snapshot(),
                               decodes=tuple(recs), holders=tuple(holders), gamma=gamma)
                )
            if max_updates > 0 and version >= max_updates:
                break
            continue

        if tables.homogeneous:
            i = int(rng.integers(0, m))
            j = int(rng.integers(0, m - 1))
            if j >= i:
                j += 1
        else:
            e = int(rng.integers(0, len(tables.edge_from)))
            if rng.random() >= tables.alias_prob[e]:
                e = int(tables.alias_idx[e])
            i = int(tables.edge_from[e])
            j = int(tables.edge_to[e])

        sender, receiver = nodes[i], nodes[j]
        if memory and forward_all:
            sent = list(sender.direct_keys)
            sender.unsent[j].clear()
        else:
            sent = list(sender.unsent[j])
            sender.unsent[j].clear()
        if memory and not forward_all:
            for token in sent:
                key = (i, token)
                owed[key] -= 1
                if owed[key] == 0:
                    # forwarded on every outgoing edge, so it can never matter again
                    del owed[key]
                    sender.direct_keys.discard(token)
        before = snapshot() if trace else ()
        for token in sent:
            if token.version > receiver.decoded_version and (memory or token.version == version):
                receiver.per_version_keyids.setdefault(token.version, set()).add(token.key_id)
        d = try_decode(j, t)
        if memory and forward_all:
            _collect_forward_all(nodes)
        if trace:
            log.append(
                TraceEvent(t, "gossip", version, sender=i, receiver=j, keys_sent=len(sent),
                           ages_before=before, ages_after=snapshot(),
                           decodes=() if d is None else (d,))
            )

    for acc in ages:
        acc.advance(t)

    raw = (
        version,
        t,
        n_events,
        np.array([a.integral for a in ages]),
        rec.first_t,
        rec.first_i,
        rec.bound_t,
        rec.bound_i,
        rec.n_cycles,
        rec.sum_len,
        rec.sum_area,
        rec.sum_upd,
        rec.sum_upd_sq,
        rec.batch_len,
        rec.batch_area,
        decodes,
        misses,
        early,
    )
    return ReferenceRun(raw, nodes, ages, log)


def _collect_forward_all(nodes: list) -> None:
    # a key of a version every node has decoded can no longer change anything
    floor = min(node.decoded_version for node in nodes)
    for node in nodes:
        if any(tok.version <= floor for tok in node.direct_keys):
            node.direct_keys = {tok for tok in node.direct_keys if tok.version > floor}


def expected_events(cfg: ValidatedConfig, horizon) -> float:
    from .simulator import event_tables

    total = event_tables(cfg).total_rate
    if horizon.updates is not None:
        return horizon.updates * total / cfg.lambda_s
    return horizon.time * total


def trace_events(cfg: ValidatedConfig, horizon, seed: int = 0, limit: int = TRACE_EVENT_LIMIT) -> list:
    """Time-ordered event log of one sample path.

    Each entry carries every node's age before and after the event and the
    decodes it caused; a decode lists the older versions it early-stopped.
    The path is the one :func:`tss_gossip.simulator.run_simulation` measures
    for the same seed.
    """
    from .simulator import N_BATCHES, make_rng

    if expected_events(cfg, horizon) > limit:
        raise TraceTooLarge(
            f"{horizon.describe()} implies about {expected_events(cfg, horizon):.3g} events; limit is {limit}"
        )
    run = run_reference(
        cfg,
        make_rng(seed),
        horizon.updates or 0,
        math.inf if horizon.time is None else float(horizon.time),
        N_BATCHES,
        trace=True,
        event_limit=limit,
    )
    return run.trace
