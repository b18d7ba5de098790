import math
from collections import Counter

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, strategies as st

import gffperc.graph as graph_module
from gffperc.errors import AssumptionError, GenerationError, GraphFormatError, UnsupportedStructureError
from gffperc.graph import (CoverChart, RegularGraph, ScaleConstants, audit_assumptions, ball_cycle_length,
                           count_nonbacktracking_paths, cover_tree_image, generate_random_regular, goodness_radius,
                           load_graph, save_graph, spectral_gap, tree_ball_size)
from utils import DEFAULT_BETA, RETRY_FACTOR


def brute_force_paths(graph, x, y, R, window):
    inside = set(graph.ball(x, R))
    k, k_end = window
    count = 0

    def walk(v, previous, length):
        nonlocal count
        if v == y and k <= length < k_end:
            count += 1
        if length + 1 >= k_end:
            return
        for u in graph.adjacency[v]:
            if u != previous and u in inside:
                walk(u, v, length + 1)

    walk(x, None, 0)
    return count


def test_tree_ball_size():
    assert [tree_ball_size(3, r) for r in range(4)] == [1, 4, 10, 22]
    assert tree_ball_size(4, 2) == 1 + 4 + 12


@pytest.mark.parametrize('d, n, seed', [(3, 1000, 5), (3, 200, 1), (4, 300, 2)])
def test_tree_like_balls_have_tree_size(d, n, seed):
    graph = generate_random_regular(d, n, seed=seed) if d == 3 else RegularGraph.from_networkx(
        nx.random_regular_graph(d, n, seed=seed))
    for r in range(1, 4):
        for x in range(graph.n_vertices):
            ball = graph.ball(x, r)
            if graph.tree_excess(ball) == 0:
                assert len(ball) == tree_ball_size(d, r) == (d * (d - 1) ** r - 2) // (d - 2)


@pytest.mark.slow
def test_audit_pass_rate_over_seeds():
    reports = [audit_assumptions(generate_random_regular(3, 1000, seed=seed), alpha=0.3, beta=DEFAULT_BETA)
               for seed in range(100)]
    assert all(report.radius_checked == 2 for report in reports)
    assert sum(report.passes[1] for report in reports) >= 90


def test_goodness_radius_floor():
    assert goodness_radius(2, 3) == 1
    assert goodness_radius(4, 3) == 8
    assert goodness_radius(2 ** 16, 3) == 32


def test_from_edges_rejects_bad_degree():
    with pytest.raises(GraphFormatError):
        RegularGraph.from_edges(3, 4, [(0, 1), (1, 2), (2, 3), (3, 0)])


def test_rejects_asymmetric_adjacency():
    with pytest.raises(GraphFormatError):
        RegularGraph(d=3, adjacency=((1, 2, 3), (0, 2, 3), (0, 1, 3), (0, 1, 1)))


def test_from_networkx_rejects_irregular():
    with pytest.raises(GraphFormatError):
        RegularGraph.from_networkx(nx.path_graph(5))


def test_named_graphs(k4, petersen):
    assert k4.n_vertices == 4 and k4.is_simple and k4.is_connected
    assert petersen.n_vertices == 10 and len(petersen.edges()) == 15
    assert spectral_gap(k4) == pytest.approx(4 / 3)
    assert spectral_gap(petersen) == pytest.approx(2 / 3)


def test_spectral_gap_iterative_matches_dense(small_graph):
    assert spectral_gap(small_graph, dense_threshold=10) == pytest.approx(spectral_gap(small_graph), abs=1e-6)


def test_generation_is_simple_and_deterministic():
    a = generate_random_regular(3, 40, seed=3)
    b = generate_random_regular(3, 40, seed=3)
    assert a.adjacency == b.adjacency
    assert a.is_simple
    assert all(len(nbrs) == 3 for nbrs in a.adjacency)


def test_generation_validates_arguments():
    with pytest.raises(ValueError):
        generate_random_regular(3, 7, seed=0)
    with pytest.raises(ValueError):
        generate_random_regular(2, 10, seed=0)


def test_generation_gives_up():
    # K6 is the only simple 5-regular graph on 6 vertices, a random pairing almost never hits it
    with pytest.raises(GenerationError):
        generate_random_regular(5, 6, seed=0, max_attempts=3)


def test_generation_budget_is_ten_attempts_per_vertex(monkeypatch):
    calls = []

    def reject(d, n, rng):
        calls.append(n)
        raise graph_module._PairingRejected("self-loop")

    monkeypatch.setattr(graph_module, '_pair_stubs', reject)
    with pytest.raises(GenerationError, match=f"after {RETRY_FACTOR * 8} attempts"):
        generate_random_regular(3, 8, seed=0)
    assert len(calls) == RETRY_FACTOR * 8 == 80


def test_save_and_load(tmp_path, petersen):
    path = tmp_path / 'petersen.txt'
    save_graph(petersen, path)
    assert load_graph(path) == petersen


def test_load_rejects_malformed(tmp_path):
    path = tmp_path / 'bad.txt'
    path.write_text('3 4\n0: 1 2 3\n1: 0 2 3\n')
    with pytest.raises(GraphFormatError):
        load_graph(path)


def test_distances_and_boundary(petersen):
    dist = petersen.distances_from(0)
    assert dist[0] == 0 and dist.max() == 2
    assert petersen.ball(0, 1) == sorted([0, *petersen.neighbors(0)])
    assert petersen.boundary([0]) == list(petersen.neighbors(0))
    assert len(petersen.sphere(0, 2)) == 6


def test_tree_excess(k4, petersen, prism):
    assert k4.tree_excess(range(4)) == 3
    assert petersen.tree_excess(petersen.ball(0, 1)) == 0
    assert petersen.tree_excess(range(10)) == 6
    assert ball_cycle_length(prism, 0, 1) == 3


def test_audit_report(petersen):
    report = audit_assumptions(petersen, alpha=1.0, beta=0.05)
    assert report.connected and report.simple
    assert report.radius_checked == 3
    assert report.max_tree_excess_in_ball == 6
    assert report.passes == (True, False, True)
    assert not report.all_pass
    assert report.spectral_gap == pytest.approx(2 / 3)


def test_audit_rejects_bad_parameters(petersen):
    with pytest.raises(ValueError):
        audit_assumptions(petersen, alpha=0.0, beta=0.1)


def test_scale_constants():
    constants = ScaleConstants.from_graph(n=2 ** 13, d=3, alpha=0.3, beta=0.05, spectral_gap=0.06)
    assert constants.c0 == pytest.approx(0.0075)
    assert constants.r_n == 1 and constants.R_n == 1
    assert constants.t_n == pytest.approx(math.log(2 ** 13) ** 2 / 0.06)
    assert set(constants.as_dict()) >= {'c0', 'r_n', 'R_n', 's_n', 't_n'}
    assert constants.gamma_h(1.0) == 0
    assert constants.gamma_h(2.0) == pytest.approx(0.0075 / 20)
    with pytest.raises(ValueError):
        ScaleConstants(d=3, n=100, alpha=1.0, beta=2.0)
    with pytest.raises(AssumptionError):
        ScaleConstants(d=3, n=100, alpha=0.5, beta=0.5).t_n


def test_cover_chart(k4):
    chart = CoverChart(k4, 0)
    assert chart.image(()) == 0
    assert [chart.image((i,)) for i in range(3)] == [1, 2, 3]
    assert chart.image((0, 0)) == 2
    assert chart.forward_sphere(1) == {2, 3}
    assert chart.minimal_preimage(3) == (2,)
    with pytest.raises(ValueError):
        chart.image((0, 2))


def test_cover_tree_image_on_k4(k4):
    assert cover_tree_image(k4, 0, ()) == 0
    depth_two = CoverChart(k4, 0).addresses_at_depth(2)
    assert len(depth_two) == 6
    hits = Counter(cover_tree_image(k4, 0, address) for address in depth_two)
    assert hits == {1: 2, 2: 2, 3: 2}


def test_cover_chart_is_a_covering(petersen):
    chart = CoverChart(petersen, 4)
    for address in chart.addresses_at_depth(3):
        v = chart.image(address)
        assert chart.image(address[:-1]) in petersen.neighbors(v)


@pytest.mark.parametrize('window', [(1, 3), (1, 5), (2, 6), (3, 7)])
def test_nonbacktracking_paths_match_brute_force(prism, window):
    for y in prism.ball(0, 1):
        assert count_nonbacktracking_paths(prism, 0, y, 1, window) == brute_force_paths(prism, 0, y, 1, window)


def test_nonbacktracking_paths_on_a_tree_ball(petersen):
    y = petersen.neighbors(0)[0]
    assert count_nonbacktracking_paths(petersen, 0, y, 1, (0, 6)) == 1
    assert count_nonbacktracking_paths(petersen, 0, 0, 1, (0, 6)) == 1


def test_nonbacktracking_paths_reject_dense_balls(k4):
    with pytest.raises(UnsupportedStructureError):
        count_nonbacktracking_paths(k4, 0, 1, 1, (1, 3))


def small_regular_graphs():
    graphs = [nx.Graph(g) for g in nx.graph_atlas_g()
              if g.number_of_nodes() >= 4 and nx.is_connected(g) and nx.is_regular(g)
              and min(d for _, d in g.degree()) >= 3]
    for d, sizes in ((3, (8, 10, 12)), (4, (9, 10, 11, 12))):
        graphs += [nx.random_regular_graph(d, n, seed=seed) for n in sizes for seed in range(5)]
    return [RegularGraph.from_networkx(g) for g in graphs]


def test_nonbacktracking_paths_on_small_graphs():
    checked = 0
    for graph in small_regular_graphs():
        for x in range(graph.n_vertices):
            for R in (1, 2):
                ball = graph.ball(x, R)
                if graph.tree_excess(ball) >= 2:
                    with pytest.raises(UnsupportedStructureError):
                        count_nonbacktracking_paths(graph, x, x, R, (0, 3))
                    continue
                for y in ball:
                    for window in ((0, 3), (1, 5), (2, 7)):
                        assert (count_nonbacktracking_paths(graph, x, y, R, window)
                                == brute_force_paths(graph, x, y, R, window))
                        checked += 1
    assert checked > 0


def five_cycle_gadget():
    # cycle 0..4, pendant 5+i on cycle vertex i, leaves 10+2i and 11+2i under pendant 5+i
    edges = [(i, (i + 1) % 5) for i in range(5)]
    edges += [(i, 5 + i) for i in range(5)]
    edges += [(5 + i, 10 + 2 * i + j) for i in range(5) for j in range(2)]
    # leaves closed up by a 10-cycle that never joins two siblings
    ring = [10, 12, 11, 14, 13, 16, 15, 18, 17, 19]
    edges += [(ring[i], ring[(i + 1) % 10]) for i in range(10)]
    return RegularGraph.from_edges(3, 20, edges)


def test_five_cycle_gadget_has_at_most_two_paths_per_window():
    gadget = five_cycle_gadget()
    ball = gadget.ball(0, 2)
    assert gadget.tree_excess(ball) == 1
    distances = gadget.distances_from(0)
    for y in range(5):
        assert count_nonbacktracking_paths(gadget, 0, y, 2, (0, int(distances[y]))) == 0
        for k in range(12):
            count = count_nonbacktracking_paths(gadget, 0, y, 2, (k, k + 5))
            assert count == brute_force_paths(gadget, 0, y, 2, (k, k + 5))
            assert count <= 2


@given(st.integers(min_value=0, max_value=2 ** 32 - 1))
def test_relabel_preserves_structure(seed):
    graph = generate_random_regular(3, 12, seed=seed)
    permutation = np.random.default_rng(seed).permutation(12)
    relabelled = graph.relabel(permutation)
    assert nx.is_isomorphic(nx.Graph(graph.to_networkx()), nx.Graph(relabelled.to_networkx()))
    assert spectral_gap(relabelled) == pytest.approx(spectral_gap(graph))
