import numpy as np
import pytest

from biasbp.bias import (
    DistanceKind,
    DistancePolicy,
    apsp_bias,
    bias_table,
    link_distances,
    parse_policy,
    read_bias_csv,
    sssp_bias,
    write_bias_csv,
)
from biasbp.topology import TopologyConfig, generate_network
from biasbp.traffic import LinkRateProcess

from oracles import graph_from_edges, random_connected_graph, simple_path_distances


RATES = LinkRateProcess(np.array([13.0, 26.0]), np.array([[26, 26], [26, 26]]))


def test_distance_examples():
    assert link_distances(parse_policy("SP-1/x"), 1, duty=[0.25])[0] == 4.0
    d = link_distances(parse_policy("SP-rbar/(xr)"), 2, duty=[0.5, 0.5], rates=RATES)
    assert d[0] == pytest.approx(26 / (0.5 * 13))
    assert np.array_equal(link_distances(parse_policy("EDR-10"), 3), [10.0, 10.0, 10.0])
    assert np.array_equal(link_distances(parse_policy("SP-Hop"), 2), [1.0, 1.0])
    d = link_distances(parse_policy("SP-10rbar/r"), 2, rates=RATES)
    assert d.tolist() == [20.0, 10.0]
    assert link_distances(parse_policy("BP"), 2) is None


def test_distance_errors():
    with pytest.raises(ValueError):
        link_distances(parse_policy("SP-1/x"), 2)
    with pytest.raises(ValueError):
        link_distances(parse_policy("SP-10rbar/r"), 2)
    zero = LinkRateProcess(np.array([0.0, 3.0]), np.ones((2, 2), dtype=np.int64))
    with pytest.raises(ValueError):
        link_distances(parse_policy("SP-10rbar/r"), 2, rates=zero)


def test_policy_names_roundtrip():
    for name in ("BP", "SP-Hop", "EDR-10", "SP-10rbar/r", "SP-1/x", "SP-rbar/(xr)", "EDR-2.5"):
        assert parse_policy(name).name == name
    assert parse_policy("SP-10r̄/r") == DistancePolicy(DistanceKind.RATE_SCALED, 10.0)
    with pytest.raises(ValueError):
        parse_policy("VBR")


def test_path_example():
    g = graph_from_edges(3, [(0, 1), (1, 2)])
    table = apsp_bias(g, [4.0, 5.0])
    assert table[0, 2] == 9 and table[1, 2] == 5 and table[2, 2] == 0


def test_hop_policy_gives_hop_counts():
    g = graph_from_edges(5, [(0, 1), (1, 2), (2, 3), (3, 4), (0, 4)])
    table = apsp_bias(g, np.ones(5))
    assert table[0].tolist() == [0, 1, 2, 2, 1]


def test_apsp_matches_simple_path_enumeration():
    rng = np.random.default_rng(0)
    for _ in range(20):
        n = int(rng.integers(2, 11))
        g = random_connected_graph(rng, n)
        w = rng.uniform(0.1, 5.0, g.num_links)
        table = apsp_bias(g, w)
        assert np.allclose(table, simple_path_distances(g, w), rtol=0, atol=1e-9)
        assert np.array_equal(table, table.T)
        assert (table >= 0).all() and not np.diagonal(table).any()
        # triangle inequality
        assert (table[:, None, :] <= table[:, :, None] + table[None, :, :] + 1e-9).all()


def test_sssp_matches_apsp_column_and_round_bound():
    rng = np.random.default_rng(1)
    for _ in range(20):
        n = int(rng.integers(2, 15))
        g = random_connected_graph(rng, n)
        w = rng.uniform(0.1, 5.0, g.num_links)
        table = apsp_bias(g, w)
        for c in range(n):
            col, rounds = sssp_bias(g, w, c, return_rounds=True)
            assert np.allclose(col, table[:, c], rtol=0, atol=1e-9)
            assert rounds <= n - 1


def test_sssp_star_and_path_rounds():
    star = graph_from_edges(4, [(0, 1), (0, 2), (0, 3)])
    col = sssp_bias(star, np.ones(3), 1)
    assert col.tolist() == [1.0, 0.0, 2.0, 2.0]
    for n in (2, 5, 9):
        path = graph_from_edges(n, [(k, k + 1) for k in range(n - 1)])
        _, rounds = sssp_bias(path, np.ones(n - 1), 0, return_rounds=True)
        assert rounds == n - 1


def test_scale_covariance():
    net = generate_network(TopologyConfig(30, rng_seed=2))
    hop = bias_table("SP-Hop", net)
    edr = bias_table("EDR-10", net)
    assert np.allclose(edr, 10 * hop)
    assert bias_table("BP", net) is None


def test_unreachable_pair_is_error():
    g = graph_from_edges(4, [(0, 1), (2, 3)])
    with pytest.raises(ValueError):
        apsp_bias(g, [1.0, 1.0])
    with pytest.raises(ValueError):
        sssp_bias(g, [1.0, 1.0], 0)
    with pytest.raises(ValueError):
        apsp_bias(graph_from_edges(2, [(0, 1)]), [0.0])


def test_duty_policy_bias_nonnegative():
    net = generate_network(TopologyConfig(25, rng_seed=3))
    x = np.random.default_rng(0).uniform(1e-6, 1, net.num_links)
    rates = LinkRateProcess(np.full(net.num_links, 20.0), np.full((net.num_links, 3), 20))
    for pol in ("SP-1/x", "SP-rbar/(xr)"):
        table = bias_table(pol, net, x, rates)
        assert (table >= 0).all() and not np.diagonal(table).any()


def test_bias_csv_roundtrip(tmp_path):
    net = generate_network(TopologyConfig(12, rng_seed=0))
    table = apsp_bias(net.graph, np.random.default_rng(0).uniform(0.5, 3, net.num_links))
    path = tmp_path / "bias.csv"
    write_bias_csv(table, path, "seed=0")
    assert np.array_equal(read_bias_csv(path), table)
