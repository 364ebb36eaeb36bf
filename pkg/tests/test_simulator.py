import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tss_gossip import analytic as an
from tss_gossip.model import Heterogeneous, NetworkConfig, Scheme, homogeneous, validate_config
from tss_gossip.simulator import (
    HorizonTooShort,
    Time,
    UpdateCount,
    _raw_run,
    pool,
    replication_seed,
    run_replications,
    run_simulation,
)


def hetero_config(scheme="memory", seed=3):
    rng = np.random.default_rng(seed)
    mat = rng.uniform(0.5, 8.0, size=(6, 6))
    np.fill_diagonal(mat, 0.0)
    return validate_config(NetworkConfig(2, 4, 2, 6, 3.0, Heterogeneous(mat.tolist()), Scheme.parse(scheme)))


def test_k0_ages_are_exactly_zero():
    for scheme in ("memory", "memoryless"):
        st_ = run_simulation(homogeneous(0, 5, 5, 5, 10, 50, scheme), UpdateCount(2000), seed=1)
        assert np.all(st_.node_means == 0.0)
        assert st_.graph_mean == 0.0


def test_same_seed_same_result():
    cfg = homogeneous(2, 6, 3, 10, 10, 80, "memory")
    a = run_simulation(cfg, UpdateCount(3000), seed=42)
    b = run_simulation(cfg, UpdateCount(3000), seed=42)
    assert np.array_equal(a.node_means, b.node_means)
    assert a.events == b.events and a.end_time == b.end_time
    c = run_simulation(cfg, UpdateCount(3000), seed=43)
    assert not np.array_equal(a.node_means, c.node_means)


def test_single_replication_is_the_plain_run():
    cfg = homogeneous(2, 6, 6, 8, 10, 60, "memoryless")
    pooled = run_replications(cfg, UpdateCount(2000), base_seed=9, count=1)
    plain = run_simulation(cfg, UpdateCount(2000), seed=replication_seed(9, 0))
    assert np.array_equal(pooled.node_means, plain.node_means)
    assert pooled.graph_mean == plain.graph_mean


def test_pooling_is_mean_of_means_and_thread_independent():
    cfg = homogeneous(2, 6, 3, 10, 10, 80, "memory")
    one = run_replications(cfg, UpdateCount(2000), base_seed=5, count=4, threads=1)
    many = run_replications(cfg, UpdateCount(2000), base_seed=5, count=4, threads=4)
    assert one.graph_mean == many.graph_mean
    means = [r.graph_mean for r in one.replications]
    assert one.graph_mean == pytest.approx(np.mean(means), rel=1e-14)
    assert len(one.replications) == 4


def test_half_width_shrinks_like_root_count():
    cfg = homogeneous(2, 5, 5, 6, 10, 100, "memory")
    h4 = run_replications(cfg, UpdateCount(4000), base_seed=1, count=4).ci_half("graph")
    h16 = run_replications(cfg, UpdateCount(4000), base_seed=1, count=16).ci_half("graph")
    assert 1.6 <= h4 / h16 <= 2.5


def test_pool_does_not_mutate_inputs():
    cfg = homogeneous(1, 4, 4, 4, 5, 40)
    runs = [run_simulation(cfg, UpdateCount(500), seed=s) for s in range(3)]
    before = [r.graph_mean for r in runs]
    pool(runs)
    assert [r.graph_mean for r in runs] == before
    assert all(r.replications == [] for r in runs)


def test_graph_weighting_is_exact():
    cfg = homogeneous(2, 6, 3, 10, 10, 80, "memory")
    res = run_simulation(cfg, UpdateCount(3000), seed=2)
    expected = (3 * res.mean("subscriber") + 7 * res.mean("nonsubscriber")) / 10
    assert res.graph_mean == pytest.approx(expected, abs=1e-12)


def test_horizon_too_short():
    with pytest.raises(HorizonTooShort):
        run_simulation(homogeneous(3, 6, 6, 20, 10, 5, "memoryless"), UpdateCount(1), seed=0)


def test_time_horizon_stops_at_time():
    res = run_simulation(homogeneous(1, 4, 4, 4, 5, 40), Time(200.0), seed=0)
    assert res.end_time == 200.0
    assert 700 < res.updates < 1300


def test_invalid_horizons():
    from tss_gossip.simulator import Horizon

    for kw in ({}, {"updates": 5, "time": 1.0}, {"updates": 0}, {"time": -1.0}, {"time": math.inf}):
        with pytest.raises(ValueError):
            Horizon(**kw)


# --- differential check against the reference engine -----------------------------


def _same_path(cfg, horizon, seed):
    a = _raw_run(cfg, horizon, seed, "compiled")
    b = _raw_run(cfg, horizon, seed, "reference")
    assert len(a) == len(b)
    for x, y in zip(a, b):
        assert np.array_equal(np.asarray(x), np.asarray(y))


@pytest.mark.parametrize("scheme", ["memory", "memoryless"])
@pytest.mark.parametrize("params", [(2, 5, 5, 5), (2, 5, 5, 8), (1, 4, 2, 7), (0, 3, 1, 5), (3, 6, 0, 6 + 2)])
def test_engines_follow_the_same_path(scheme, params):
    k, n, s, m = params
    _same_path(homogeneous(k, n, s, m, 4.0, 30.0, scheme), UpdateCount(300), seed=7)


@pytest.mark.parametrize("scheme", ["memory", "memoryless"])
def test_engines_agree_heterogeneous_and_timed(scheme):
    _same_path(hetero_config(scheme), UpdateCount(200), seed=11)
    _same_path(homogeneous(2, 5, 3, 7, 4.0, 30.0, scheme), Time(40.0), seed=12)


@settings(max_examples=25)
@given(st.integers(2, 7), st.data(), st.sampled_from(["memory", "memoryless"]), st.integers(0, 2**32))
def test_engines_agree_random_configs(m, data, scheme, seed):
    n = data.draw(st.integers(1, m))
    s = n if n == m else data.draw(st.integers(0, n))
    k = data.draw(st.integers(0, min(n - 1, m - 2)))
    le = data.draw(st.floats(1.0, 60.0))
    cfg = homogeneous(k, n, s, m, 3.0, le, scheme)
    a = _raw_run(cfg, UpdateCount(60), seed, "compiled")
    b = _raw_run(cfg, UpdateCount(60), seed, "reference")
    for x, y in zip(a, b):
        assert np.array_equal(np.asarray(x), np.asarray(y))


def test_forwarding_every_held_key_gives_the_same_path():
    from tss_gossip.reference import run_reference
    from tss_gossip.simulator import N_BATCHES, make_rng

    cfg = homogeneous(2, 6, 3, 9, 5.0, 40.0, "memory")
    a = run_reference(cfg, make_rng(4), 200, math.inf, N_BATCHES).raw
    b = run_reference(cfg, make_rng(4), 200, math.inf, N_BATCHES, forward_all=True).raw
    for x, y in zip(a, b):
        assert np.array_equal(np.asarray(x), np.asarray(y))


# --- closed forms as simulation oracles ------------------------------------------


@pytest.mark.slow
def test_simulation_matches_full_subscription_closed_forms():
    cfg = homogeneous(2, 5, 5, 6, 10.0, 100.0, "memory")
    res = run_replications(cfg, UpdateCount(40_000), base_seed=1, count=4)
    expected = an.memory_graph_age(2, 5, 5, 6, 10.0, 100.0).value
    assert res.graph_mean == pytest.approx(expected, rel=0.03)

    cfg = homogeneous(2, 5, 5, 6, 10.0, 100.0, "memoryless")
    res = run_replications(cfg, UpdateCount(40_000), base_seed=1, count=4)
    expected = an.memoryless_graph_age(2, 5, 5, 6, 10.0, 100.0).value
    assert res.graph_mean == pytest.approx(expected, rel=0.03)


def test_heterogeneous_simulation_matches_per_node_closed_form():
    mat = np.array([[0, 5, 1, 2], [3, 0, 4, 1], [2, 2, 0, 6], [1, 3, 2, 0]], dtype=float)
    cfg = validate_config(NetworkConfig(1, 4, 4, 4, 2.0, Heterogeneous(mat.tolist()), Scheme.MEMORY))
    res = run_replications(cfg, UpdateCount(20_000), base_seed=3, count=4)
    for j in range(4):
        rates = [mat[i, j] for i in range(4) if i != j]
        expected = an.age_memory_full(1, 3, rates, 2.0).value
        assert res.node_means[j] == pytest.approx(expected, rel=0.05)
