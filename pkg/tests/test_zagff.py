import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gffperc.errors import AssumptionError
from gffperc.graph import RegularGraph, ScaleConstants, generate_random_regular, spectral_gap
from gffperc.harmonic import HarmonicSolver
from gffperc.parallel import run_tasks
from gffperc.zagff import (GraphField, IncrementalConditioner, build_green, conditional_law,
                           gamblers_ruin_exit_time, gamblers_ruin_hit_probability, green_by_quadrature,
                           green_identity_residual, green_upper_bound, killed_graph_green, local_green_bound,
                           sample_sequential, sample_zagff, sample_zagff_batch, schur_conditional_law,
                           sup_tail_frequency)


def test_k4_green_function(k4_green):
    expected = np.full((4, 4), -3 / 16) + np.eye(4) * 12 / 16
    assert np.allclose(k4_green.matrix, expected, atol=1e-12)


def test_green_is_the_group_inverse(petersen, petersen_green):
    G = petersen_green.matrix
    laplacian = np.eye(10) - petersen.transition_matrix().toarray()
    assert np.allclose(G @ laplacian, np.eye(10) - 1 / 10, atol=1e-10)
    assert np.allclose(G.sum(axis=1), 0, atol=1e-10)
    assert np.allclose(G, G.T)


def test_disconnected_graph_is_rejected():
    two_k4 = RegularGraph.from_edges(3, 8, [(u, v) for base in (0, 4) for u in range(base, base + 4)
                                            for v in range(u + 1, base + 4)])
    with pytest.raises(AssumptionError):
        build_green(two_k4)


def test_killed_green_on_k4(k4):
    assert killed_graph_green(k4, [0], 0, 0) == pytest.approx(1.0)
    assert killed_graph_green(k4, [0, 1], 0, 0) == pytest.approx(9 / 8)
    assert killed_graph_green(k4, [0, 1], 0, 1) == pytest.approx(3 / 8)
    assert killed_graph_green(k4, [0, 1], 2, 0) == 0.0
    with pytest.raises(ValueError):
        killed_graph_green(k4, range(4), 0, 0)


def test_hitting_times_on_k4(k4):
    solver = HarmonicSolver(k4, [0])
    assert solver.expected_hit_time(1) == pytest.approx(3.0)
    assert solver.stationary_hit_time() == pytest.approx(9 / 4)
    assert solver.hit_distribution(2) == {0: pytest.approx(1.0)}


@pytest.mark.parametrize('a', [-2.0, 0.0, 1.5])
def test_k4_conditional_law(k4_green, a):
    mean, variance = conditional_law(k4_green, [0], {0: a}, 1)
    assert mean == pytest.approx(-a / 3, abs=1e-12)
    assert variance == pytest.approx(0.5, abs=1e-12)
    assert conditional_law(k4_green, [0], [a], 0) == (a, 0.0)


def test_conditional_law_needs_a_set(k4_green):
    with pytest.raises(ValueError):
        conditional_law(k4_green, [], [], 1)
    with pytest.raises(ValueError):
        conditional_law(k4_green, [0, 1], [1.0], 2)


@given(st.integers(min_value=0, max_value=2 ** 32 - 1), st.integers(min_value=1, max_value=8))
def test_conditional_law_matches_schur_complement(petersen_green, seed, size):
    rng = np.random.default_rng(seed)
    A = sorted(rng.choice(10, size=size, replace=False).tolist())
    observed = rng.normal(size=size)
    for x in range(10):
        mean, variance = conditional_law(petersen_green, A, observed, x)
        oracle_mean, oracle_variance = schur_conditional_law(petersen_green, A, observed, x)
        assert mean == pytest.approx(oracle_mean, abs=1e-9)
        assert variance == pytest.approx(oracle_variance, abs=1e-9)


def test_conditional_law_on_a_random_graph():
    graph = generate_random_regular(3, 30, seed=2)
    green = build_green(graph)
    rng = np.random.default_rng(0)
    for _ in range(20):
        A = sorted(rng.choice(30, size=rng.integers(1, 15), replace=False).tolist())
        observed = rng.normal(size=len(A))
        solver = HarmonicSolver(graph, A)
        x = int(rng.integers(30))
        law = conditional_law(green, A, observed, x, solver=solver)
        assert law == pytest.approx(schur_conditional_law(green, A, observed, x), abs=1e-9)


def test_incremental_conditioner_matches_schur(petersen_green):
    conditioner = IncrementalConditioner(petersen_green)
    observed = {0: 1.0, 4: -0.5, 7: 0.25}
    for u, value in observed.items():
        conditioner.add(u, value)
    A = sorted(observed)
    for x in (1, 2, 9):
        assert conditioner.law(x) == pytest.approx(
            schur_conditional_law(petersen_green, A, observed, x), abs=1e-10)
    with pytest.raises(ValueError):
        conditioner.add(0, 2.0)


def test_sequential_sampler_stays_zero_average(k4_green):
    values = sample_sequential(k4_green, [2, 0, 3, 1], seed=4)
    assert abs(values.sum()) < 1e-9
    GraphField(k4_green.graph, values)


@pytest.mark.parametrize('U', [[], [0], [0, 1], [1, 2, 3]])
def test_green_identity_on_k4(k4_green, U):
    assert green_identity_residual(k4_green, U) <= 1e-9


def test_green_identity_on_random_sets(petersen_green):
    rng = np.random.default_rng(7)
    for _ in range(10):
        U = rng.choice(10, size=rng.integers(1, 9), replace=False).tolist()
        assert green_identity_residual(petersen_green, U) <= 1e-9
    with pytest.raises(ValueError):
        green_identity_residual(petersen_green, range(10))


def test_green_by_quadrature(k4, k4_green):
    assert np.allclose(green_by_quadrature(k4), k4_green.matrix, atol=1e-8)


def test_green_bounds(small_graph):
    green = build_green(small_graph)
    gap = spectral_gap(small_graph)
    c0 = 0.3 * gap / 2
    G = green.matrix
    for x in range(0, 64, 7):
        dist = small_graph.distances_from(x)
        for y in range(64):
            assert G[x, y] <= green_upper_bound(3, dist[y], 64, c0, gap)
    assert local_green_bound(3, 0) == pytest.approx(6.0)


@pytest.mark.parametrize('d, s', [(3, 1), (3, 2), (4, 3)])
def test_gamblers_ruin_formulas(d, s):
    r = 1 / (d - 1)
    assert gamblers_ruin_hit_probability(d, s) == pytest.approx((r - r ** (s + 1)) / (1 - r ** (s + 1)))
    assert gamblers_ruin_exit_time(d, s) > 1 - 1e-12
    assert gamblers_ruin_hit_probability(3, 1) == pytest.approx(1 / 3)
    assert gamblers_ruin_exit_time(3, 1) == pytest.approx(1.0)


def test_iterative_mode_matches_dense(small_graph):
    dense = build_green(small_graph)
    iterative = build_green(small_graph, dense_threshold=10)
    assert not iterative.dense
    assert np.allclose(iterative.column(5), dense.column(5), atol=1e-6)
    assert iterative.entry(3, 9) == pytest.approx(dense.entry(3, 9), abs=1e-6)
    assert np.allclose(iterative.submatrix([1, 2], [3, 4, 5]), dense.submatrix([1, 2], [3, 4, 5]), atol=1e-6)
    centred = np.eye(64) - 1 / 64
    root = np.column_stack([iterative._chebyshev_apply(centred[:, i]) for i in range(64)])
    assert np.allclose(root @ root.T, dense.matrix, atol=1e-4)


def test_green_columns_are_shared_across_threads(small_graph):
    dense = build_green(small_graph)
    iterative = build_green(small_graph, dense_threshold=10)
    tasks = [(x % 16,) for x in range(128)]
    columns = run_tasks(iterative.column, tasks, threads=4)
    assert len(iterative._columns) == 16
    for (x,), column in zip(tasks, columns):
        assert column is iterative.column(x)
        assert np.allclose(column, dense.column(x), atol=1e-6)


def test_iterative_samples_are_zero_average(small_graph):
    iterative = build_green(small_graph, dense_threshold=10)
    field = sample_zagff(iterative, seed=1)
    assert abs(field.values.sum()) < 1e-8


def test_samplers_are_deterministic(petersen_green):
    assert np.array_equal(sample_zagff_batch(petersen_green, 5, 3), sample_zagff_batch(petersen_green, 5, 3))
    assert np.allclose(sample_zagff_batch(petersen_green, 5, 3).sum(axis=1), 0, atol=1e-10)


def test_graph_field_validation(k4):
    with pytest.raises(ValueError):
        GraphField(k4, np.array([1.0, 0.0, 0.0, 0.0]))
    GraphField(k4, np.array([1.0, 0.0, 0.0, 0.0]), zero_average=False)
    assert GraphField(k4, np.array([1.0, -3.0, 1.0, 1.0])).sup_abs() == 3.0


def test_sup_tail_frequency(petersen_green):
    assert sup_tail_frequency(petersen_green, 0.0, 50, seed=0) == 1.0
    assert sup_tail_frequency(petersen_green, 100.0, 50, seed=0) == 0.0


def _covariance_within(samples, target, sigmas=5):
    replicas = len(samples)
    empirical = samples.T @ samples / replicas
    error = np.sqrt((np.outer(np.diag(target), np.diag(target)) + target ** 2) / replicas)
    return np.all(np.abs(empirical - target) <= sigmas * error + 1e-12)


@pytest.fixture(scope='module')
def green_32():
    return build_green(generate_random_regular(3, 32, seed=4))


@pytest.mark.slow
def test_batch_sampler_covariance(green_32):
    assert _covariance_within(sample_zagff_batch(green_32, 10 ** 5, seed=1), green_32.matrix)


@pytest.mark.slow
def test_sequential_sampler_covariance(green_32):
    order = np.random.default_rng(0).permutation(32)
    samples = np.stack([sample_sequential(green_32, order, seed=i) for i in range(10 ** 5)])
    assert _covariance_within(samples, green_32.matrix)


@pytest.mark.slow
def test_conditional_law_master_oracle():
    rng = np.random.default_rng(11)
    pairs = 0
    for n in (20, 30, 40, 50):
        green = build_green(generate_random_regular(3, n, seed=n))
        for _ in range(250):
            A = sorted(rng.choice(n, size=rng.integers(1, n), replace=False).tolist())
            observed = rng.normal(size=len(A))
            x = int(rng.integers(n))
            mean, variance = conditional_law(green, A, observed, x)
            oracle_mean, oracle_variance = schur_conditional_law(green, A, observed, x)
            assert abs(mean - oracle_mean) <= 1e-8 and abs(variance - oracle_variance) <= 1e-8
            pairs += 1
    assert pairs == 1000


def test_green_bound_on_a_large_graph(large_graph, large_green):
    gap = spectral_gap(large_graph)
    c0 = ScaleConstants.from_graph(n=1000, d=3, alpha=0.3, beta=gap).c0
    local_range = c0 / 3 * math.log(1000, 2)
    G = large_green.matrix
    for x in range(0, 1000, 10):
        dist = large_graph.distances_from(x)
        bound = np.array([green_upper_bound(3, int(k), 1000, c0, gap) for k in dist])
        assert np.all(G[x] <= bound)
        near = dist <= local_range
        assert np.all(G[x, near] <= np.array([local_green_bound(3, int(k)) for k in dist[near]]))


@pytest.mark.slow
def test_iterative_sampler_covariance(small_graph):
    iterative = build_green(small_graph, dense_threshold=10)
    samples = sample_zagff_batch(iterative, 4000, seed=2)
    assert _covariance_within(samples, build_green(small_graph).matrix)
    assert math.isfinite(samples.max())
