"""Compiled event loop behind :func:`tss_gossip.simulator.run_simulation`.

The loop draws one exponential for the superposed event clock, then classifies
the event.  The order of random draws is part of the contract: the pure-Python
engine in :mod:`tss_gossip.reference` consumes the generator identically, so
both produce the same sample path from the same seed.

Memory-scheme bookkeeping lives in ring buffers indexed by ``version & mask``;
the buffer doubles whenever the oldest undecoded version would be overwritten.
"""

from __future__ import annotations

import numpy as np
from numba import njit

MEMORY = 0
MEMORYLESS = 1

_INITIAL_WINDOW = 64


@njit(cache=True, nogil=True)
def _grow(holds, counts, version, window):
    new_window = window * 2
    m = holds.shape[0]
    new_holds = np.zeros((m, new_window), dtype=np.uint8)
    new_counts = np.zeros((m, new_window), dtype=np.int32)
    old_mask = window - 1
    new_mask = new_window - 1
    lo = version - window + 1
    if lo < 0:
        lo = 0
    for v in range(lo, version + 1):
        for j in range(m):
            new_holds[j, v & new_mask] = holds[j, v & old_mask]
            new_counts[j, v & new_mask] = counts[j, v & old_mask]
    return new_holds, new_counts, new_window


@njit(cache=True, nogil=True)
def simulate(
    rng,
    k,
    n,
    s,
    m,
    scheme,
    lambda_s,
    total_rate,
    homogeneous,
    edge_from,
    edge_to,
    alias_prob,
    alias_idx,
    max_updates,
    t_end,
    n_batches,
):
    thr = k + 1
    n_select = n - s
    n_nonsub = m - s

    age = np.zeros(m, dtype=np.int64)
    decoded = np.zeros(m, dtype=np.int64)
    integral = np.zeros(m)
    last_t = np.zeros(m)

    cyc_open = np.zeros(m, dtype=np.uint8)
    cyc_t0 = np.zeros(m)
    cyc_i0 = np.zeros(m)
    cyc_v0 = np.zeros(m, dtype=np.int64)
    first_t = np.zeros(m)
    first_i = np.zeros(m)
    bound_t = np.zeros(m)
    bound_i = np.zeros(m)
    n_cycles = np.zeros(m, dtype=np.int64)
    sum_len = np.zeros(m)
    sum_area = np.zeros(m)
    sum_upd = np.zeros(m)
    sum_upd_sq = np.zeros(m)
    batch_len = np.zeros((m, n_batches))
    batch_area = np.zeros((m, n_batches))

    n_decodes = np.zeros(m, dtype=np.int64)
    n_misses = np.zeros(m, dtype=np.int64)
    n_early = np.zeros(m, dtype=np.int64)

    nonsub = np.arange(s, m)
    last_sent = np.zeros((m, m), dtype=np.int64)

    window = _INITIAL_WINDOW
    holds = np.zeros((m, window), dtype=np.uint8)
    counts = np.zeros((m, window), dtype=np.int32)
    has_key = np.zeros(m, dtype=np.uint8)
    cur_count = np.zeros(m, dtype=np.int64)
    holders = np.empty(n, dtype=np.int64)

    n_edges = edge_from.shape[0]
    version = 0
    t = 0.0
    n_events = 0

    while True:
        t += rng.standard_exponential() / total_rate
        if t > t_end:
            t = t_end
            break
        u = rng.random() * total_rate
        n_events += 1
        if u < lambda_s:
            version += 1
            for idx in range(n_select):
                r = rng.integers(idx, n_nonsub)
                tmp = nonsub[idx]
                nonsub[idx] = nonsub[r]
                nonsub[r] = tmp
            for j in range(s):
                holders[j] = j
            for idx in range(n_select):
                holders[s + idx] = nonsub[idx]

            if max_updates > 0:
                batch = ((version - 1) * n_batches) // max_updates
            else:
                batch = int(t * n_batches / t_end)
            if batch >= n_batches:
                batch = n_batches - 1

            min_decoded = version
            for j in range(m):
                integral[j] += age[j] * (t - last_t[j])
                last_t[j] = t
                if scheme == MEMORYLESS and version > 1 and decoded[j] < version - 1:
                    n_misses[j] += 1
                age[j] += 1
                if decoded[j] < min_decoded:
                    min_decoded = decoded[j]
                if age[j] == 1:
                    if cyc_open[j]:
                        length = t - cyc_t0[j]
                        area = integral[j] - cyc_i0[j]
                        upd = version - cyc_v0[j]
                        n_cycles[j] += 1
                        sum_len[j] += length
                        sum_area[j] += area
                        sum_upd[j] += upd
                        sum_upd_sq[j] += upd * upd
                        batch_len[j, batch] += length
                        batch_area[j, batch] += area
                    else:
                        cyc_open[j] = 1
                        first_t[j] = t
                        first_i[j] = integral[j]
                    bound_t[j] = t
                    bound_i[j] = integral[j]
                    cyc_t0[j] = t
                    cyc_i0[j] = integral[j]
                    cyc_v0[j] = version

            if scheme == MEMORY:
                while version - min_decoded > window:
                    holds, counts, window = _grow(holds, counts, version - 1, window)
                slot = version & (window - 1)
                for j in range(m):
                    holds[j, slot] = 0
                    counts[j, slot] = 0
                for h in range(n):
                    holds[holders[h], slot] = 1
                    counts[holders[h], slot] = 1
            else:
                for j in range(m):
                    has_key[j] = 0
                    cur_count[j] = 0
                for h in range(n):
                    has_key[holders[h]] = 1
                    cur_count[holders[h]] = 1

            if thr == 1:
                for h in range(n):
                    j = holders[h]
                    # any older undecoded version has no key yet, so it is pending
                    if scheme == MEMORY and decoded[j] < version - 1:
                        n_early[j] += 1
                    decoded[j] = version
                    age[j] = 0
                    n_decodes[j] += 1

            if max_updates > 0 and version >= max_updates:
                break
            continue

        if homogeneous:
            i = rng.integers(0, m)
            j = rng.integers(0, m - 1)
            if j >= i:
                j += 1
        else:
            e = rng.integers(0, n_edges)
            if rng.random() >= alias_prob[e]:
                e = alias_idx[e]
            i = edge_from[e]
            j = edge_to[e]

        if scheme == MEMORY:
            lo = last_sent[i, j]
            if decoded[j] > lo:
                lo = decoded[j]
            last_sent[i, j] = version
            mask = window - 1
            best = decoded[j]
            for v in range(lo + 1, version + 1):
                if holds[i, v & mask]:
                    c = counts[j, v & mask] + 1
                    counts[j, v & mask] = c
                    if c >= thr:
                        best = v
            if best > decoded[j]:
                for v in range(decoded[j] + 1, best):
                    if counts[j, v & mask] < thr:
                        n_early[j] += 1
                        break
                integral[j] += age[j] * (t - last_t[j])
                last_t[j] = t
                decoded[j] = best
                age[j] = version - best
                n_decodes[j] += 1
        else:
            if has_key[i] and decoded[j] < version and last_sent[i, j] < version:
                last_sent[i, j] = version
                cur_count[j] += 1
                if cur_count[j] >= thr:
                    integral[j] += age[j] * (t - last_t[j])
                    last_t[j] = t
                    decoded[j] = version
                    age[j] = 0
                    n_decodes[j] += 1

    for j in range(m):
        integral[j] += age[j] * (t - last_t[j])
        last_t[j] = t

    return (
        version,
        t,
        n_events,
        integral,
        first_t,
        first_i,
        bound_t,
        bound_i,
        n_cycles,
        sum_len,
        sum_area,
        sum_upd,
        sum_upd_sq,
        batch_len,
        batch_area,
        n_decodes,
        n_misses,
        n_early,
    )
