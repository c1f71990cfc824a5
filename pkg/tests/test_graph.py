import numpy as np
import pytest

from aqcomplete import graph
from aqcomplete.errors import InputError
from aqcomplete.geo import GeoPoint, haversine_distance, offset_point
from aqcomplete.graph import Segment, StreetGraph, StreetNetwork

ORIGIN = (51.2, 4.4)


def pt(east, north=0.0):
    return GeoPoint(*offset_point(ORIGIN, east, north))


def street(sid, *easts, north=0.0):
    return Segment(sid, tuple(pt(e, north) for e in easts))


def dense_operator(n, edges):
    """Straight transcription of D^-1/2 (A + I) D^-1/2 with dense arrays."""
    a = np.zeros((n, n))
    for i, j, w in edges:
        a[i, j] = a[j, i] = w
    at = a + np.eye(n)
    d = at.sum(axis=1)
    return np.diag(d ** -0.5) @ at @ np.diag(d ** -0.5)


def test_proximity_edge():
    a, b = pt(0), pt(100)
    g = graph.build_graph([a, b], None, 200.0)
    assert len(g.edges) == 1
    i, j, w = g.edges[0]
    assert (i, j) == (0, 1)
    assert w == pytest.approx(1.0 / haversine_distance(a, b))
    assert w == pytest.approx(0.01, rel=1e-4)


def test_same_segment_edge():
    net = StreetNetwork((street(7, -50, 400),))
    g = graph.build_graph([pt(0), pt(300)], net, 200.0)
    assert len(g.edges) == 1
    assert g.edges[0][2] == pytest.approx(1 / 300, rel=1e-4)
    assert g.node_segment == (7, 7)


def test_different_segments_no_edge():
    net = StreetNetwork((street(1, -50, 100), street(2, 200, 400)))
    g = graph.build_graph([pt(0), pt(300)], net, 200.0)
    assert g.edges == ()
    assert g.node_segment == (1, 2)


def test_snap_tolerance():
    net = StreetNetwork((street(3, 0, 500),))
    assert graph.snap_to_segments([[*offset_point(ORIGIN, 100, 15)]], net) == [3]
    assert graph.snap_to_segments([[*offset_point(ORIGIN, 100, 25)]], net) == [None]


def test_distance_floor():
    a = pt(0)
    g = graph.build_graph([a, a], None, 200.0)
    assert g.edges[0][2] == 1.0


def test_distant_nodes_without_network():
    g = graph.build_graph([pt(0), pt(5000)], None, 200.0)
    assert g.edges == ()


def test_invalid_inputs():
    with pytest.raises(InputError):
        graph.build_graph([], None, 200.0)
    with pytest.raises(InputError):
        graph.build_graph([pt(0)], None, 0.0)
    with pytest.raises(InputError):
        StreetGraph(2, ((1, 0, 1.0),))
    with pytest.raises(InputError):
        StreetGraph(2, ((0, 1, 0.0),))
    with pytest.raises(InputError):
        StreetGraph(2, ((0, 1, 1.0), (0, 1, 2.0)))
    with pytest.raises(InputError):
        Segment(0, (pt(0),))


def test_normalize_isolated_node():
    assert graph.normalize(StreetGraph(1, ())).dense().tolist() == [[1.0]]


def test_normalize_two_nodes():
    p = graph.normalize(StreetGraph(2, ((0, 1, 1.0),))).dense()
    assert np.allclose(p, [[0.5, 0.5], [0.5, 0.5]], atol=1e-15)


def random_graph(rng, n, density=0.3):
    edges = tuple((i, j, float(rng.uniform(0.01, 2.0)))
                  for i in range(n) for j in range(i + 1, n) if rng.random() < density)
    return StreetGraph(n, edges)


def test_normalize_matches_dense_oracle(rng):
    for _ in range(20):
        g = random_graph(rng, 10)
        assert np.allclose(graph.normalize(g).dense(), dense_operator(g.n, g.edges), atol=1e-14)


def test_operator_properties(rng):
    for _ in range(10):
        n = int(rng.integers(1, 25))
        g = random_graph(rng, n, 0.2)
        p = graph.normalize(g).dense()
        assert np.abs(p - p.T).max() <= 1e-12
        assert (p >= 0).all()
        assert np.abs(np.linalg.eigvalsh(p)).max() <= 1 + 1e-9
        isolated = np.flatnonzero(g.degrees() == 0)
        for i in isolated:
            assert np.array_equal(p[i], np.eye(n)[i])


def test_relabeling_permutes_operator(rng):
    locs = [pt(*rng.uniform(-300, 300, 2)) for _ in range(15)]
    perm = rng.permutation(15)
    p = graph.normalize(graph.build_graph(locs, None, 200.0)).dense()
    q = graph.normalize(graph.build_graph([locs[k] for k in perm], None, 200.0)).dense()
    assert np.allclose(q, p[np.ix_(perm, perm)], atol=1e-15)


def test_edge_rule_on_synthetic_grid(desk_obs, desk_dataset):
    g = graph.build_graph(desk_obs.locations, desk_dataset.network, 200.0)
    edges = {(i, j) for i, j, _ in g.edges}
    coords = desk_obs.locations
    rng = np.random.default_rng(0)
    for _ in range(300):
        i, j = sorted(rng.choice(g.n, 2, replace=False))
        near = haversine_distance(coords[i], coords[j]) < 200.0
        seg = g.node_segment[i] is not None and g.node_segment[i] == g.node_segment[j]
        assert ((i, j) in edges) == (near or seg)
    assert all(w > 0 for _, _, w in g.edges)


def test_graph_and_network_json_roundtrip(tmp_path, desk_obs, desk_dataset):
    g = graph.build_graph(desk_obs.locations, desk_dataset.network, 200.0)
    g.save(tmp_path / "g.json")
    assert graph.StreetGraph.load(tmp_path / "g.json") == g
    desk_dataset.network.save(tmp_path / "n.json")
    assert StreetNetwork.load(tmp_path / "n.json") == desk_dataset.network
    stats = g.stats()
    assert stats["edge_count"] == len(g.edges)
    assert sum(stats["degree_histogram"].values()) == g.n


def test_malformed_network_document():
    with pytest.raises(InputError):
        StreetNetwork.from_json({"segments": [{"id": 1, "points": [[0, 0]]}]})
    with pytest.raises(InputError):
        StreetNetwork.from_json({"segments": [{"id": 1}]})
