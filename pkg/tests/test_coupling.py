import math

import numpy as np
import pytest

from gffperc.coupling import (LocalTreeChart, boundary_variance_check, chart_killed_green_gap,
                              conditional_proximity_check, couple_local, deviation_tail, good_vertex_gaps)
from gffperc.errors import AssumptionError, GeometryError
from gffperc.graph import tree_ball_size
from gffperc.tree import TreeBall

from .conftest import tree_like_vertices


@pytest.fixture(scope='module')
def centres(large_graph):
    candidates = tree_like_vertices(large_graph, 4)
    x = candidates[0]
    dist = large_graph.distances_from(x)
    x_prime = next(v for v in candidates if dist[v] > 8)
    return x, x_prime


def test_local_chart_is_injective(large_graph, centres):
    x, _ = centres
    chart = LocalTreeChart(large_graph, [x], 2)
    assert chart.n_vertices == tree_ball_size(3, 2)
    assert chart.vertices[0] == x and chart.addresses[0] == ()
    assert sorted(chart.vertices) == large_graph.ball(x, 2)
    assert np.allclose(chart.transition_matrix().sum(axis=1)[:4], 1.0)


def test_local_chart_rejects_cycles(k4):
    with pytest.raises(GeometryError):
        LocalTreeChart(k4, [0], 2)


def test_single_coupling(large_green, centres):
    x, _ = centres
    pair = couple_local(large_green, x, 1, 2, seed=3)
    assert pair.residual <= 1e-9
    assert pair.harmonic_gap <= 1e-9
    assert len(pair.psi) == len(pair.phi) == len(pair.domain) == tree_ball_size(3, 2)
    assert sorted(pair.inner.tolist()) == sorted(large_green.graph.ball(x, 1))
    assert pair.sup_deviation == pytest.approx(np.max(np.abs(pair.psi - pair.phi)[np.isin(pair.domain, pair.inner)]))
    again = couple_local(large_green, x, 1, 2, seed=3)
    assert np.array_equal(again.psi, pair.psi) and np.array_equal(again.phi, pair.phi)


def test_pair_coupling(large_green, centres):
    x, x_prime = centres
    pair = couple_local(large_green, x, 1, 2, seed=0, x_prime=x_prime)
    assert len(pair.domain) == 2 * tree_ball_size(3, 2)
    assert pair.residual <= 1e-9


def test_coupling_geometry_errors(k4_green, large_green, centres):
    x, _ = centres
    with pytest.raises(ValueError):
        couple_local(large_green, x, 2, 2, seed=0)
    with pytest.raises(GeometryError):
        couple_local(k4_green, 0, 1, 2, seed=0)
    with pytest.raises(GeometryError):
        couple_local(large_green, x, 1, 2, seed=0, x_prime=large_green.graph.neighbors(x)[0])


def test_chart_killed_green_gap(large_green, centres):
    x, x_prime = centres
    assert chart_killed_green_gap(large_green, x, 2) <= 1e-9
    assert chart_killed_green_gap(large_green, x, 3, x_prime=x_prime) <= 1e-9


def test_deviation_tail(large_green, centres):
    x, _ = centres
    tail = deviation_tail(large_green, x, 1, 2, 12, seed=5, threads=1)
    assert tail.max_residual <= 1e-9
    assert all(b <= a for a, b in zip(tail.frequencies, tail.frequencies[1:]))
    assert tail == deviation_tail(large_green, x, 1, 2, 12, seed=5, threads=2)


def test_root_boundary_variance_on_the_tree():
    report = boundary_variance_check(TreeBall(3, 4), None, 3)
    assert report.variances[0] == pytest.approx(0.25)
    assert report.distances[0] == 0


@pytest.mark.parametrize('d, R', [(3, 2), (3, 3), (4, 2)])
def test_tree_boundary_variance_within_bound(d, R):
    report = boundary_variance_check(TreeBall(d, R), None, R)
    assert report.side == 'tree'
    assert report.violations == 0


def test_tree_boundary_variance_radius():
    with pytest.raises(GeometryError):
        boundary_variance_check(TreeBall(3, 2), None, 3)


def test_graph_boundary_variance(large_green, centres):
    x, _ = centres
    report = boundary_variance_check(large_green, x, 2)
    assert report.side == 'graph'
    assert len(report.vertices) == len(report.variances) == len(report.bounds) == tree_ball_size(3, 2)
    assert all(v >= -1e-12 for v in report.variances)


def test_conditional_proximity(large_green, centres):
    x, _ = centres
    y = large_green.graph.neighbors(x)[0]
    report = conditional_proximity_check(large_green, [x], y, {x: 1.0}, 2)
    assert report.parent == x
    assert report.target_mean == pytest.approx(0.5)
    assert report.target_variance == pytest.approx(1.5)
    assert report.mean_gap < 0.5 and report.var_gap < 0.5
    with pytest.raises(AssumptionError):
        conditional_proximity_check(large_green, [x], y, {x: 1.0}, 2, b=1e-4)
    with pytest.raises(AssumptionError):
        conditional_proximity_check(large_green, [x], y, {x: 100.0}, 2, b_prime=1.0)


def test_proximity_needs_a_good_vertex(k4_green):
    with pytest.raises(GeometryError):
        conditional_proximity_check(k4_green, [0], 1, [0.3], 1)


def test_good_vertex_gaps(large_green):
    reports = good_vertex_gaps(large_green, 4, 3, seed=0, s=2)
    assert reports
    assert all(math.isfinite(r.mean_gap) and r.var_gap >= 0 for r in reports)
