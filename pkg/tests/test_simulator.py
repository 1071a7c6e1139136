import numpy as np
import pytest

from biasbp.bias import ALL_POLICIES, BASELINE_POLICIES, bias_table, parse_policy
from biasbp.gnn import init_params, predict_duty_cycles
from biasbp.routing import InvariantError
from biasbp.simulator import (
    BenchmarkSpec,
    EpisodeConfig,
    SlotTrace,
    compute_metrics,
    derive_seed,
    run_benchmark,
    run_episode,
    summarize,
)
from biasbp.topology import TopologyConfig, generate_network, make_instance
from biasbp.traffic import Episode, Flow, LinkRateProcess, sample_episode

TWO_NODES = make_instance(np.array([[0.0, 0.0], [0.5, 0.0]]))


def fixed_episode(flows, arrivals, rate, T):
    E = TWO_NODES.num_links
    lr = LinkRateProcess(np.full(E, float(rate)), np.full((E, T), rate, dtype=np.int64))
    return Episode(tuple(flows), np.asarray(arrivals, dtype=np.int64), lr)


def trace_with(delivered=(), undelivered=(), schedule=None, T=10):
    schedule = np.zeros((T, 1), dtype=bool) if schedule is None else schedule
    return SlotTrace(
        num_slots=T,
        schedule=schedule,
        arrivals=np.zeros(T, dtype=np.int64),
        deliveries=np.zeros(T, dtype=np.int64),
        backlog=np.zeros(T, dtype=np.int64),
        transmissions=np.zeros((0, 6), dtype=np.int64),
        delivered_runs=np.array(delivered, dtype=np.int64).reshape(-1, 3),
        undelivered_runs=np.array(undelivered, dtype=np.int64).reshape(-1, 2),
    )


def test_two_node_chain_delivers_in_birth_slot():
    T = 20
    arrivals = np.zeros((1, T))
    arrivals[0, ::3] = 2
    ep = fixed_episode([Flow(0, 1, 0.6)], arrivals, 50, T)
    table = bias_table("SP-Hop", TWO_NODES)
    m, trace = run_episode(EpisodeConfig(TWO_NODES, ep, parse_policy("SP-Hop"), bias=table))
    assert m.delivery_rate == 1.0 and m.delivered == arrivals.sum()
    # arrivals are applied before decisions, so each packet leaves in its birth slot
    assert m.mean_delay == 0.0
    assert trace.schedule[:, 0].tolist() == (arrivals[0] > 0).tolist()
    assert not trace.backlog.any()


def test_two_node_slow_link_builds_delay():
    T = 6
    ep = fixed_episode([Flow(0, 1, 3.0)], [[3, 0, 0, 0, 0, 0]], 1, T)
    m, trace = run_episode(EpisodeConfig(TWO_NODES, ep))
    # one packet per slot: delays 0, 1, 2
    assert m.mean_delay == 1.0 and m.delivery_rate == 1.0
    assert trace.backlog.tolist() == [2, 1, 0, 0, 0, 0]


def test_zero_arrivals():
    net = generate_network(TopologyConfig(15, rng_seed=0))
    ep = sample_episode(net, 50, seed=0, fixed_arrival_rate=0.0)
    m, trace = run_episode(EpisodeConfig(net, ep))
    assert not trace.backlog.any() and not trace.schedule.any()
    assert m.arrived == 0 and m.delivery_rate == 1.0 and m.mean_delay == 0.0


def test_compute_metrics_examples():
    m = compute_metrics(trace_with(delivered=[(0, 1, 4), (5, 6, 2)]), 10)
    assert m.mean_delay == 1.0 and m.delivery_rate == 1.0
    m = compute_metrics(trace_with(undelivered=[(0, 1)], T=1000), 1000)
    assert m.mean_delay == 1000 and m.delivery_rate == 0.0
    sched = np.zeros((1000, 2), dtype=bool)
    sched[:250, 0] = True
    m = compute_metrics(trace_with(schedule=sched, T=1000), 1000)
    assert m.schedule_frequency.tolist() == [0.25, 0.0]


def test_undelivered_packet_counts_horizon_minus_birth():
    T = 10
    # the link never carries anything: rate 0
    ep = fixed_episode([Flow(0, 1, 0.1)], [[0, 0, 0, 1, 0, 0, 0, 0, 0, 0]], 0, T)
    m, trace = run_episode(EpisodeConfig(TWO_NODES, ep))
    assert trace.undelivered_runs.tolist() == [[3, 1]]
    assert m.mean_delay == T - 3 and m.delivery_rate == 0.0


@pytest.fixture(scope="module")
def mid_net():
    return generate_network(TopologyConfig(25, rng_seed=11))


def test_replay_determinism(mid_net):
    ep = sample_episode(mid_net, 200, seed=3)
    table = bias_table("EDR-10", mid_net)
    cfg = EpisodeConfig(mid_net, ep, parse_policy("EDR-10"), bias=table)
    _, a = run_episode(cfg)
    _, b = run_episode(cfg)
    assert a.equals(b)


def test_classical_equals_zero_bias_bit_for_bit(mid_net):
    for s in range(3):
        ep = sample_episode(mid_net, 200, seed=s)
        _, a = run_episode(EpisodeConfig(mid_net, ep))
        zero = np.zeros((mid_net.num_nodes, mid_net.num_nodes))
        _, b = run_episode(EpisodeConfig(mid_net, ep, parse_policy("EDR-0"), bias=zero))
        assert a.equals(b)


def test_backlog_sum_equals_total_delay(mid_net):
    # a packet waiting from slot b to slot d sits in d - b end-of-slot backlogs
    for pol in ("BP", "SP-10rbar/r"):
        ep = sample_episode(mid_net, 300, seed=5)
        m, trace = run_episode(
            EpisodeConfig(mid_net, ep, parse_policy(pol), bias=bias_table(pol, mid_net, rates=ep.rates)),
            deep_check=True,
        )
        assert trace.backlog.sum() == pytest.approx(m.mean_delay * m.arrived, abs=1e-6)
        assert trace.arrivals.sum() == m.arrived
        assert trace.deliveries.sum() == m.delivered
        # per-slot conservation
        assert np.array_equal(np.cumsum(trace.arrivals - trace.deliveries), trace.backlog)


def test_transmission_rows_respect_rates_and_schedule(mid_net):
    ep = sample_episode(mid_net, 150, seed=6)
    _, trace = run_episode(EpisodeConfig(mid_net, ep))
    tx = trace.transmissions
    assert (tx[:, 5] > 0).all()
    assert (tx[:, 5] <= ep.rates.realized_rates[tx[:, 1], tx[:, 0]]).all()
    assert trace.schedule[tx[:, 0], tx[:, 1]].all()
    for t in range(0, 150, 10):
        assert mid_net.conflict_graph.is_independent(trace.schedule[t])


def test_bad_bias_table_rejected(mid_net):
    ep = sample_episode(mid_net, 5, seed=0)
    bad = np.ones((mid_net.num_nodes, mid_net.num_nodes))
    with pytest.raises(InvariantError):
        run_episode(EpisodeConfig(mid_net, ep, parse_policy("EDR-1"), bias=bad))
    with pytest.raises(ValueError):
        run_episode(EpisodeConfig(mid_net, ep, commodities="some"))


def stability_ratio(net, ep, policy, duty=None):
    table = bias_table(policy, net, duty, ep.rates)
    m, _ = run_episode(EpisodeConfig(net, ep, parse_policy(policy), bias=table))
    T = ep.horizon
    b = m.backlog
    return b[T // 2 :].max(), b[T // 4 : T // 2].max()


def low_load_episode(net, seed, T=1000):
    ep = sample_episode(net, T, seed, count_range=(2, 2), fixed_arrival_rate=0.1)
    assert len(ep.flows) == 2
    return ep


def test_stability_proxy_at_low_load():
    params = init_params(seed=0)
    for s in range(10):
        net = generate_network(TopologyConfig(20, rng_seed=derive_seed(77, s)))
        ep = low_load_episode(net, derive_seed(78, s))
        duty = predict_duty_cycles(params, net.laplacian())
        for pol in ALL_POLICIES:
            late, mid = stability_ratio(net, ep, pol, duty)
            assert late <= 3 * mid, (s, pol, late, mid)


def test_benchmark_rows_and_summary():
    spec = BenchmarkSpec(sizes=(12, 14), policies=("BP", "SP-Hop", "EDR-10"), instances=2, episodes=2, T=60, seed=1)
    rows = run_benchmark(spec)
    assert len(rows) == 2 * 2 * 2 * 3
    by_key = {(r["num_nodes"], r["instance"], r["episode"]): set() for r in rows}
    for r in rows:
        by_key[(r["num_nodes"], r["instance"], r["episode"])].add(r["seed"])
    assert all(len(v) == 1 for v in by_key.values())  # same randomness for all policies
    summary = summarize(rows)
    assert len(summary) == 2 * 3
    assert all(s["instances"] == 2 and 0 <= s["delivery_rate"] <= 1 for s in summary)


def test_benchmark_parallel_matches_serial():
    spec = BenchmarkSpec(sizes=(12,), policies=BASELINE_POLICIES, instances=2, episodes=1, T=40, seed=2)
    assert run_benchmark(spec, jobs=1) == run_benchmark(spec, jobs=2)


def test_benchmark_errors():
    with pytest.raises(ValueError):
        run_benchmark(BenchmarkSpec(sizes=(12,), policies=()))
    with pytest.raises(ValueError):
        run_benchmark(BenchmarkSpec(sizes=(12,), policies=("SP-1/x",), instances=1, episodes=1, T=5))


def test_duty_policies_run_with_params():
    spec = BenchmarkSpec(sizes=(12,), policies=("SP-1/x", "SP-rbar/(xr)"), instances=1, episodes=1, T=40)
    rows = run_benchmark(spec, params=init_params(seed=0))
    assert [r["policy"] for r in rows] == ["SP-1/x", "SP-rbar/(xr)"]


def test_load_sweep_rows():
    spec = BenchmarkSpec(sizes=(12,), policies=("BP",), instances=1, episodes=1, T=40, arrival_rates=(0.05, 0.45))
    rows = run_benchmark(spec)
    assert [r["arrival_rate"] for r in rows] == [0.05, 0.45]
    assert rows[0]["delivery_rate"] >= 0
