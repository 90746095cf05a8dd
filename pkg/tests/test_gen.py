import math

import numpy as np
import pytest

from numpmp.gen import (
    GenSpec,
    PruneMap,
    TransitMetadata,
    TransitSpec,
    degrade,
    departure_bins,
    fail_and_prune,
    gen_congested,
    gen_transit,
    gen_uncongested,
    links_per_stream,
    path_prices,
    prune,
    spatial_graph,
    streams_per_link,
)
from numpmp.model import LINEAR, LOG, validate

from conftest import make_problem


def test_uncongested_shape_and_mean():
    p = gen_uncongested(GenSpec(m=1000, seed=42))
    assert (p.m, p.n) == (1000, 500)
    assert abs(p.route_lengths.mean() - 10) <= 0.5
    assert validate(p) == []
    assert np.all((p.capacities >= 0.5) & (p.capacities <= 1.5))


def test_mean_route_length_over_seeds():
    means = [gen_uncongested(GenSpec(m=1000, seed=s)).route_lengths.mean() for s in range(40)]
    inside = np.mean([abs(mu - 10) <= 0.5 for mu in means])
    assert inside >= 0.95


def test_smallest_spec():
    p = gen_uncongested(GenSpec(m=2, n=1, avg_links_per_stream=1))
    assert p.n == 1 and p.route_lengths.tolist() == [1]


def test_same_seed_same_problem():
    a = gen_uncongested(GenSpec(m=300, kind="mixed", weights=("uniform", 0.5, 2), seed=4))
    b = gen_uncongested(GenSpec(m=300, kind="mixed", weights=("uniform", 0.5, 2), seed=4))
    assert a == b
    assert set(a.kinds.tolist()) == {LOG, LINEAR}


def test_congested_heavy_tail():
    spec = GenSpec(m=20_000, seed=7)
    p, hot = gen_congested(spec, return_hot=True)
    deg = streams_per_link(p)
    assert len(hot) == math.ceil(0.001 * 20_000)
    n = p.n
    assert np.all(np.abs(deg[hot] - 0.1 * n) < 5 * math.sqrt(n * 0.09) + 10)
    cold = np.delete(deg, hot)
    assert cold.mean() == pytest.approx(n * 10 / p.m, rel=0.05)
    assert deg[hot].min() > 20 * cold.max() / 2


def test_single_hot_link():
    p, hot = gen_congested(GenSpec(m=50, seed=1), hot_link_fraction=1e-9, return_hot=True)
    assert len(hot) == 1


def test_hot_link_all_streams():
    p, hot = gen_congested(GenSpec(m=50, seed=2), hot_link_fraction=0.01, hot_stream_fraction=1.0, return_hot=True)
    assert streams_per_link(p)[hot[0]] == p.n


def test_degrade_extremes(net3):
    np.testing.assert_array_equal(degrade(net3, 0.0).capacities, net3.capacities)
    np.testing.assert_array_equal(degrade(net3, 1.0, 0.5).capacities, 0.5 * net3.capacities)


def test_degrade_binomial_count():
    p = gen_uncongested(GenSpec(m=10_000, seed=0))
    d = degrade(p, seed=11)
    k = int(np.count_nonzero(d.capacities != p.capacities))
    mean, sd = 0.25 * p.m, math.sqrt(p.m * 0.25 * 0.75)
    assert abs(k - mean) <= 3 * sd
    np.testing.assert_allclose(d.capacities[d.capacities != p.capacities], 0.5 * p.capacities[d.capacities != p.capacities])


def test_prune_identity(net3):
    out, pm = fail_and_prune(net3, 0.0)
    assert out == net3
    assert pm.link_map.tolist() == [0, 1, 2] and pm.stream_map.tolist() == [0, 1, 2]


def test_prune_net3_shared_link(net3):
    out, pm = prune(net3, [1])
    assert pm.removed_streams.tolist() == [1, 2]
    assert out.n == 1 and out.m == 2
    assert out.route(0).tolist() == [0]
    assert validate(out) == []


def test_prune_all_links_fails(net3):
    with pytest.raises(ValueError):
        prune(net3, [0, 1, 2])


def test_fail_probability_range(net3):
    with pytest.raises(ValueError):
        fail_and_prune(net3, 1.0)


def test_prune_map_json_and_projection(net3):
    _, pm = prune(net3, [2])
    again = PruneMap.from_json(pm.to_json())
    np.testing.assert_array_equal(again.link_map, pm.link_map)
    assert again.project_streams(np.array([10.0, 20.0, 30.0])).tolist() == [10.0, 30.0]
    assert again.project_links(np.array([1.0, 2.0, 3.0])).tolist() == [1.0, 2.0]


def test_transit_default_dimensions():
    spec = TransitSpec()
    assert spec.spatial_edges * spec.time_bins == 182_784
    assert spec.od_pairs * spec.routes_per_od * spec.departures_per_route == 19_800


def test_transit_tiny():
    p, meta = gen_transit(
        TransitSpec(stations=2, time_bins=3, spatial_edges=1, od_pairs=1, routes_per_od=1, departures_per_route=3),
        edges=[(0, 1)],
        ods=[(0, 1)],
    )
    assert p.n == 3 and p.m == 3
    assert p.route_lengths.tolist() == [1, 1, 1]
    assert [meta.streams[j][2] for j in range(3)] == [0, 1, 2]


def test_transit_horizon_drop():
    # path 0->1->2->3 has 3 edges; departing at T-2 would arrive past the horizon
    T = 6
    edges = [(0, 1), (1, 2), (2, 3)]
    p, meta = gen_transit(
        TransitSpec(stations=4, time_bins=T, spatial_edges=3, od_pairs=1, routes_per_od=1, departures_per_route=T),
        edges=edges,
        ods=[(0, 3)],
    )
    assert sorted(t for _, _, t in meta.streams) == [0, 1, 2, 3]
    assert meta.dropped_streams == 2


def test_transit_links_consecutive_in_time():
    spec = TransitSpec(stations=12, time_bins=24, spatial_edges=40, od_pairs=20, departures_per_route=5, seed=3)
    p, meta = gen_transit(spec)
    T = meta.time_bins
    for j in range(p.n):
        links = p.route(j)
        assert links.tolist() == meta.stream_links(j)
        assert np.all(np.diff(links % T) == 1)


def test_transit_shortfall_and_skip(caplog):
    # a single edge: OD 0->1 has one route, OD 1->0 is unreachable
    spec = TransitSpec(stations=2, time_bins=4, spatial_edges=1, od_pairs=2, routes_per_od=2, departures_per_route=2)
    p, meta = gen_transit(spec, edges=[(0, 1)], ods=[(0, 1), (1, 0)])
    assert meta.od_shortfall == [[0, 1]]
    assert meta.skipped_ods == [[1, 0]]
    assert "disconnected" in caplog.text


def test_transit_metadata_round_trip():
    spec = TransitSpec(stations=8, time_bins=12, spatial_edges=20, od_pairs=6, departures_per_route=3, seed=1)
    _, meta = gen_transit(spec)
    assert TransitMetadata.from_json(meta.to_json()) == meta


def test_spatial_graph_strongly_connected():
    import networkx as nx

    edges = spatial_graph(30, 80, np.random.default_rng(0))
    assert len(set(edges)) == 80
    assert nx.is_strongly_connected(nx.DiGraph(edges))


def test_departure_bins_even():
    assert departure_bins(192, 30)[:3] == [0, 6, 12]
    assert len(departure_bins(192, 30)) == 30


def test_path_prices_basic(net3):
    pp = path_prices(net3, np.zeros(3))
    assert np.all(pp.pi == 0)
    pp = path_prices(make_problem([[0]], [1.0]), np.array([3.0]))
    assert pp.pi.tolist() == [3.0]
    assert pp.lam_hat[0].tolist() == [1.0]


def test_path_prices_shared_normalization(net3):
    pp = path_prices(net3, np.array([1.0, 2.0, 4.0]), streams=[0, 1])
    assert pp.pi.tolist() == [1.0, 6.0, 2.0]
    assert pp.lam_hat[0].tolist() == [0.25]
    assert pp.lam_hat[1].tolist() == [0.5, 1.0]


def test_histogram_inputs(net3):
    assert links_per_stream(net3).tolist() == [1, 2, 1]
    assert streams_per_link(net3).tolist() == [1, 2, 1]
