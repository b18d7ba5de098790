import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gffperc.errors import GeometryError
from gffperc.graph import cover_tree_image
from gffperc.harmonic import HarmonicSolver
from gffperc.tree import (TreeBall, TreeField, forward_cluster, hitting_distribution_sphere, killed_tree_green,
                          sample_tree_gff, sample_tree_gff_batch, sample_tree_gff_dense, simulate_cluster_levels,
                          sphere_distance_counts, tree_conditional_law, tree_green, tree_green_matrix)

from .conftest import tree_like_vertices


def returns_before_exit(d, m):
    r = 1 / (d - 1)
    return (d - 1) / d * (1 - (1 - r) / (1 - r ** m))


def test_tree_green_values():
    assert tree_green(3, 0) == pytest.approx(2.0)
    assert tree_green(3, 2) == pytest.approx(0.5)
    assert tree_green(4, 1) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        tree_green(2, 0)


def test_tree_conditional_law():
    assert tree_conditional_law(2.0, 3) == (1.0, 1.5)


def test_ball_indexing():
    ball = TreeBall(3, 2)
    assert ball.n_vertices == 10
    assert list(ball.offsets) == [0, 1, 4, 10]
    assert ball.parent[4] == 1 and ball.parent[6] == 2 and ball.parent[9] == 3
    assert ball.address(9) == (2, 1)
    assert ball.index_of((2, 1)) == 9
    assert list(ball.children(0)) == [1, 2, 3]
    assert ball.neighbors(2) == [0, 6, 7]
    assert list(ball.is_forward) == [True, False, True, True, False, False, True, True, True, True]
    assert list(ball.forward_sphere(2)) == [6, 7, 8, 9]
    assert ball.distance(4, 6) == 4
    with pytest.raises(GeometryError):
        ball.index_of((0, 0, 0))


@given(st.integers(min_value=3, max_value=5), st.integers(min_value=1, max_value=4), st.data())
def test_parent_and_distance_consistency(d, depth, data):
    ball = TreeBall(d, depth)
    v = data.draw(st.integers(min_value=1, max_value=ball.n_vertices - 1))
    assert v in ball.children(ball.parent[v])
    assert ball.level[v] == len(ball.address(v))
    dist = ball.distances_from(v)
    u = data.draw(st.integers(min_value=0, max_value=ball.n_vertices - 1))
    assert dist[u] == ball.distance(u, v) == ball.distance(v, u)


def test_subtree():
    ball = TreeBall(3, 3)
    assert ball.subtree(1) == [1, 4, 5, 10, 11, 12, 13]
    assert ball.subtree(1, max_level=2) == [1, 4, 5]


@pytest.mark.parametrize('d, x_level, depth', [(3, 1, 5), (3, 2, 5), (4, 1, 4)])
def test_killed_subtree_green_closed_form(d, x_level, depth):
    ball = TreeBall(d, depth)
    x = int(ball.sphere(x_level)[-1])
    U = ball.subtree(x, max_level=depth - 1)
    q = returns_before_exit(d, depth - x_level)
    assert killed_tree_green(ball, U, x, x) == pytest.approx(1 / (1 - q), rel=1e-10)


def test_killed_tree_green_needs_room():
    ball = TreeBall(3, 3)
    with pytest.raises(GeometryError):
        killed_tree_green(ball, ball.subtree(1), 1, 1)


@pytest.mark.parametrize('d, s', [(3, 1), (3, 2), (3, 3), (4, 1), (4, 2), (4, 3)])
def test_gamblers_ruin_on_the_tree(d, s):
    ball = TreeBall(d, s + 1)
    solver = HarmonicSolver(ball, [0, *ball.sphere(s + 1)])
    r = 1 / (d - 1)
    assert solver.hit_distribution(1)[0] == pytest.approx((r - r ** (s + 1)) / (1 - r ** (s + 1)), abs=1e-10)
    exit_time = d / (d - 2) * ((s + 1) * (1 - r) / (1 - r ** (s + 1)) - 1)
    assert solver.expected_hit_time(1) == pytest.approx(exit_time, abs=1e-10)


def test_hitting_distribution_sphere():
    ball = TreeBall(3, 4)
    law = hitting_distribution_sphere(ball, 0, 3)
    assert sum(law.values()) == pytest.approx(1.0)
    assert all(p == pytest.approx(1 / 12) for p in law.values())
    off_centre = hitting_distribution_sphere(ball, 4, 3)
    assert sum(off_centre.values()) == pytest.approx(1.0)
    below = [v for v in off_centre if ball.parent[v] == ball.children(4)[0]]
    far = [v for v in off_centre if ball.branch[v] == 2]
    assert off_centre[below[0]] > off_centre[far[0]]
    with pytest.raises(GeometryError):
        hitting_distribution_sphere(ball, 0, 5)


def test_sphere_distance_counts():
    ball = TreeBall(3, 3)
    z1 = int(ball.sphere(3)[0])
    assert sphere_distance_counts(ball, 3, z1) == {0: 1, 2: 1, 4: 2, 6: 8}


def test_tree_field_validation():
    ball = TreeBall(3, 1)
    with pytest.raises(ValueError):
        TreeField(ball, np.zeros(3))
    with pytest.raises(ValueError):
        TreeField(ball, np.array([0.0, 1.0, 2.0, np.nan]))


def test_sampler_pins_the_root():
    field = sample_tree_gff(TreeBall(3, 3), root_condition=1.5, seed=0)
    assert field.values[0] == 1.5
    assert np.all(np.isfinite(field.values))


def test_forward_cluster_counts():
    ball = TreeBall(3, 3)
    everything = forward_cluster(TreeField(ball, np.ones(ball.n_vertices)), 0.0)
    assert list(everything.level_counts) == [1, 2, 4, 8]
    assert everything.censored and everything.size == 15
    nothing = forward_cluster(TreeField(ball, -np.ones(ball.n_vertices)), 0.0)
    assert nothing.size == 0 and not nothing.censored


def test_simulated_levels_extremes():
    rng = np.random.default_rng(0)
    full = simulate_cluster_levels(3, -1e6, 6, rng)
    assert list(full.counts) == [2 ** k for k in range(7)]
    assert full.survived
    backward = simulate_cluster_levels(3, -1e6, 3, rng, forward=False)
    assert list(backward.counts) == [1, 3, 6, 12]
    empty = simulate_cluster_levels(3, 1e6, 6, rng)
    assert empty.size == 0 and not empty.survived


def test_simulated_levels_saturate_with_weights():
    levels = simulate_cluster_levels(3, -1e6, 8, np.random.default_rng(0), max_frontier=50)
    assert levels.saturated
    assert levels.counts[-1] == pytest.approx(2 ** 8)


def test_simulated_levels_are_nested_in_depth():
    for seed in range(20):
        short = simulate_cluster_levels(3, 0.5, 4, np.random.default_rng(seed))
        long = simulate_cluster_levels(3, 0.5, 8, np.random.default_rng(seed))
        assert np.array_equal(short.counts, long.counts[:5])


@pytest.mark.slow
@pytest.mark.parametrize('sampler', [sample_tree_gff_batch, sample_tree_gff_dense])
def test_sampler_covariance(sampler):
    ball = TreeBall(3, 5)
    assert ball.n_vertices == 94
    replicas = 10 ** 5
    samples = sampler(ball, replicas, seed=1)
    target = tree_green_matrix(ball)
    empirical = samples.T @ samples / replicas
    error = np.sqrt((np.outer(np.diag(target), np.diag(target)) + target ** 2) / replicas)
    assert np.all(np.abs(samples.mean(axis=0)) <= 5 * np.sqrt(np.diag(target) / replicas))
    assert np.all(np.abs(empirical - target) <= 5 * error + 1e-12)
    assert math.isclose(target[0, 0], 2.0)
    grandchild = int(ball.sphere(2)[0])
    assert abs(samples[:, 0].var() - 2.0) <= 5 * math.sqrt(2 * 2.0 ** 2 / replicas)
    covariance = np.mean(samples[:, 0] * samples[:, grandchild])
    assert abs(covariance - 0.5) <= 5 * math.sqrt((2.0 * target[grandchild, grandchild] + 0.25) / replicas)


@pytest.mark.parametrize('d, radius', [(3, 1), (4, 1), (3, 2)])
def test_killed_tree_green_matches_the_neumann_series(d, radius):
    ball = TreeBall(d, radius + 2)
    U = [int(u) for u in ball.ball(radius)]
    block = ball.transition_matrix().toarray()[np.ix_(U, U)]
    series, term = np.eye(len(U)), np.eye(len(U))
    for _ in range(10 ** 4):
        term = term @ block
        series += term
        if np.abs(term).max() < 1e-16:
            break
    for i, x in enumerate(U):
        for j, y in enumerate(U):
            assert killed_tree_green(ball, U, x, y) == pytest.approx(series[i, j], abs=1e-10)


def test_exit_laws_agree_through_the_cover_chart(large_graph):
    R = 3
    x = tree_like_vertices(large_graph, R)[0]
    ball = TreeBall(3, R)
    images = {int(v): cover_tree_image(large_graph, x, ball.address(v)) for v in range(ball.n_vertices)}
    assert len(set(images.values())) == ball.n_vertices
    sphere = np.flatnonzero(large_graph.distances_from(x) == R)
    graph_solver = HarmonicSolver(large_graph, sphere)
    for y in ball.ball(R - 1):
        tree_law = hitting_distribution_sphere(ball, int(y), R)
        graph_law = graph_solver.hit_distribution(images[int(y)])
        assert sorted(images[v] for v in tree_law) == sorted(graph_law)
        for v, p in tree_law.items():
            assert graph_law[images[v]] == pytest.approx(p, abs=1e-10)


@pytest.mark.slow
def test_domain_markov_property_on_the_unit_ball():
    ball = TreeBall(3, 4)
    U = [int(u) for u in ball.ball(1)]
    boundary = [int(z) for z in ball.sphere(2)]
    outside = [v for v in range(ball.n_vertices) if v not in U]
    weights = np.array([[hitting_distribution_sphere(ball, u, 2)[z] for z in boundary] for u in U])
    assert np.allclose(weights.sum(axis=1), 1.0)
    replicas = 10 ** 5
    samples = sample_tree_gff_batch(ball, replicas, seed=3)
    residual = samples[:, U] - samples[:, boundary] @ weights.T
    killed = np.array([[killed_tree_green(ball, U, x, y) for y in U] for x in U])
    empirical = residual.T @ residual / replicas
    error = np.sqrt((np.outer(np.diag(killed), np.diag(killed)) + killed ** 2) / replicas)
    assert np.all(np.abs(residual.mean(axis=0)) <= 5 * np.sqrt(np.diag(killed) / replicas))
    assert np.all(np.abs(empirical - killed) <= 5 * error)
    # the residual is independent of everything outside U
    outer = samples[:, outside]
    cross = residual.T @ outer / replicas
    scale = np.sqrt(np.outer(np.diag(killed), outer.var(axis=0)) / replicas)
    assert np.all(np.abs(cross) <= 5 * scale)
