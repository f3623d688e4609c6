import math

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, strategies as st

from contspin.lattice import (GraphSpec, UnknownSiteError, WeightSpec, auxiliary_graph, ball, dist, site_weights,
                              weight, weight_growth_kappa)


def test_dist_on_z2():
    g = GraphSpec.zd(2, 4)
    assert dist(g, g.site_id((0, 0)), g.site_id((1, 2))) == 3


def test_dist_path_graph_and_self():
    g = GraphSpec.from_edges(3, [(0, 1), (1, 2)])
    assert dist(g, 0, 2) == 2
    assert dist(g, 1, 1) == 0


def test_unknown_site_rejected():
    g = GraphSpec.zd(1, 2)
    with pytest.raises(UnknownSiteError):
        g.site_id(5)
    with pytest.raises(UnknownSiteError):
        dist(g, 0, 99)


def test_disconnected_graph_rejected():
    with pytest.raises(ValueError, match="connected"):
        GraphSpec.from_edges(4, [(0, 1), (2, 3)])


@given(st.integers(2, 25), st.integers(0, 10**6))
def test_bfs_matches_networkx(n, seed):
    r = np.random.default_rng(seed)
    tree = [(i, int(r.integers(0, i))) for i in range(1, n)]
    extra = [tuple(int(v) for v in r.integers(0, n, 2)) for _ in range(n // 2)]
    g = GraphSpec.from_edges(n, tree + extra)
    G = nx.Graph()
    G.add_nodes_from(range(n))
    G.add_edges_from(tree + extra)
    ref = dict(nx.shortest_path_length(G, 0))
    assert [ref[i] for i in range(n)] == g.bfs(0).tolist()


@given(st.integers(1, 3), st.integers(0, 3))
def test_zd_distance_is_l1(d, L):
    g = GraphSpec.zd(d, L)
    c = g.coords
    assert np.array_equal(g.distance_matrix, np.abs(c[:, None] - c[None]).sum(-1))
    # lattice graph distance agrees with BFS on the truncation (it is l1-convex)
    assert np.array_equal(g.bfs(g.origin), g.distance_matrix[g.origin])


def test_ball():
    g = GraphSpec.zd(1, 6)
    b = ball(g, g.origin, 2)
    assert sorted(g.coord(s)[0] for s in b) == [-2, -1, 0, 1, 2]
    assert ball(g, g.origin, 0) == {g.origin}
    with pytest.raises(ValueError):
        ball(g, 0, -1)


@given(st.integers(0, 4))
def test_ball_size_bound(r):
    # every ball in a graph of maximal degree d has at most d^{r+1} sites
    g = GraphSpec.zd(1, 10)
    assert len(ball(g, g.origin, r)) <= g.max_degree ** (r + 1)


def test_weights():
    assert weight(WeightSpec.exponential(1.0), 0) == 1.0
    assert weight(WeightSpec.exponential(1.0), (1, 1)) == pytest.approx(0.135335, abs=1e-6)
    assert weight(WeightSpec.polynomial(3.0), 1) == 0.5
    assert weight(WeightSpec.constant(), (4, -2)) == 1.0
    with pytest.raises(ValueError):
        WeightSpec("gaussian", 1.0)
    with pytest.raises(ValueError):
        WeightSpec.exponential(0.0)
    with pytest.raises(ValueError):
        WeightSpec.polynomial(1.0).check_dimension(1)


@given(st.floats(0.1, 3.0), st.integers(1, 4))
def test_kappa_exponential_closed_form_and_scan(delta, R):
    w = WeightSpec.exponential(delta)
    g = GraphSpec.zd(1, 8)
    assert weight_growth_kappa(w, R) == pytest.approx(delta * R)
    assert weight_growth_kappa(w, R, g) == pytest.approx(delta * R)


def test_kappa_constant_and_polynomial():
    assert weight_growth_kappa(WeightSpec.constant(), 3) == 0.0
    g = GraphSpec.zd(1, 10)
    expect = max(math.log((1 + abs(x) ** 3) / (1 + abs(y) ** 3)) for x in range(-10, 11) for y in (x - 1, x + 1)
                 if abs(y) <= 10)
    assert weight_growth_kappa(WeightSpec.polynomial(3.0), 1, g) == pytest.approx(expect)
    with pytest.raises(ValueError):
        weight_growth_kappa(WeightSpec.polynomial(3.0), 1)


def test_auxiliary_graph():
    g = GraphSpec.zd(1, 10)
    assert auxiliary_graph(g, 1) is g
    h = auxiliary_graph(g, 2)
    nb = sorted(h.coord(s)[0] for s in h.neighbors[g.origin])
    assert nb == [-2, -1, 1, 2]
    a, b = g.site_id(0), g.site_id(5)
    assert dist(h, a, b) == 3 and dist(g, a, b) <= 2 * 3
    assert np.allclose(site_weights(h, WeightSpec.exponential(1.0)), site_weights(g, WeightSpec.exponential(1.0)))


def test_edge_list_roundtrip(tmp_path):
    p = tmp_path / "g.txt"
    p.write_text("# triangle plus tail\n0 1\n1 2\n2 0\n2 3\n")
    g = GraphSpec.read_edge_list(p)
    assert g.n_sites == 4 and g.degrees.tolist() == [2, 2, 3, 1]
    p.write_text("0 1 2\n")
    with pytest.raises(ValueError, match=":1:"):
        GraphSpec.read_edge_list(p)


def test_interior():
    g = GraphSpec.zd(1, 5)
    assert sorted(g.coord(s)[0] for s in g.interior(2)) == [-3, -2, -1, 0, 1, 2, 3]
    h = auxiliary_graph(GraphSpec.zd(1, 6), 2)
    inner = h.interior(1)
    assert (h.degrees[inner] == 4).all()
