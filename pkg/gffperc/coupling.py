"""
Local couplings of the zero-average field with the tree field on tree-like
balls, and exact checks of the boundary-harmonic variances and conditional laws.
"""
import logging
import math
from collections import deque
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse
from pydantic import BaseModel, ConfigDict

from utils import EPSILON_GRID

from .errors import AssumptionError, GeometryError
from .exploration import good_vertex_test
from .graph import CoverChart, log_base
from .harmonic import HarmonicSolver, killed_green_matrix
from .parallel import run_tasks, spawn_seeds
from .tree import TreeBall, address_distance, tree_conditional_law, tree_green, tree_green_matrix
from .zagff import conditional_law

logger = logging.getLogger(__name__)


def _tree_neighbours(address, d):
    result = [address + (i,) for i in range(d if not address else d - 1)]
    if address:
        result.insert(0, address[:-1])
    return result


class LocalTreeChart:
    """
    rho: the inverse of the cover map on one or two tree-like graph balls.
    Tree vertices are addresses; the local chain walks on them with the tree's
    transition probabilities 1/d.
    """

    def __init__(self, graph, centres, radius):
        self.graph = graph
        self.d = graph.d
        chart = CoverChart(graph, centres[0])
        self.tree_centres = [()] + [chart.minimal_preimage(c) for c in centres[1:]]
        self.addresses = []
        self.vertices = []
        for centre in self.tree_centres:
            seen, queue = {centre: 0}, deque([centre])
            while queue:
                a = queue.popleft()
                self.addresses.append(a)
                self.vertices.append(chart.image(a))
                if seen[a] < radius:
                    for b in _tree_neighbours(a, self.d):
                        if b not in seen:
                            seen[b] = seen[a] + 1
                            queue.append(b)
        if len(set(self.vertices)) != len(self.vertices):
            raise GeometryError("the cover map is not injective on the balls (not tree-like or overlapping)")
        self.position = {v: i for i, v in enumerate(self.vertices)}
        self.n_vertices = len(self.addresses)

    def transition_matrix(self):
        index = {a: i for i, a in enumerate(self.addresses)}
        rows, cols = [], []
        for i, a in enumerate(self.addresses):
            for b in _tree_neighbours(a, self.d):
                if b in index:
                    rows.append(i)
                    cols.append(index[b])
        return scipy.sparse.csr_matrix((np.full(len(rows), 1 / self.d), (rows, cols)),
                                       shape=(self.n_vertices, self.n_vertices))

    def tree_green(self, positions):
        addresses = [self.addresses[i] for i in positions]
        dist = np.array([[address_distance(a, b) for b in addresses] for a in addresses])
        return tree_green(self.d, dist)


@dataclass(frozen=True, eq=False)
class CoupledPair:
    domain: np.ndarray
    chart: LocalTreeChart
    inner: np.ndarray
    psi: np.ndarray
    phi: np.ndarray
    killed: np.ndarray
    residual: float
    sup_deviation: float
    harmonic_gap: float


def _check_geometry(graph, centres, r, R):
    if not 1 <= r < R:
        raise ValueError("radii must satisfy 1 <= r < R")
    balls = []
    for c in centres:
        ball = graph.ball(c, 2 * R)
        if graph.tree_excess(ball) != 0:
            raise GeometryError(f"B({c}, 2R) is not tree-like")
        balls.append(set(ball))
    if len(balls) == 2 and balls[0] & balls[1]:
        raise GeometryError("the 2R-balls around the two centres intersect")


class _CouplingGeometry:
    """Everything in a coupling that does not depend on the randomness."""

    def __init__(self, green, centres, r, R):
        graph = green.graph
        self.green = green
        self.chart = LocalTreeChart(graph, centres, R)
        self.domain = np.asarray(self.chart.vertices, dtype=np.int64)
        U = sorted({v for c in centres for v in graph.ball(c, R - 1)})
        inside_u = np.isin(self.domain, U)
        self.boundary_positions = np.flatnonzero(~inside_u)
        self.inner_positions = np.flatnonzero(np.isin(self.domain, [v for c in centres for v in graph.ball(c, r)]))
        outside = sorted(set(range(graph.n_vertices)) - set(U))
        graph_solver = HarmonicSolver(graph, outside)
        boundary_vertices = self.domain[self.boundary_positions]
        self.graph_harmonic = graph_solver.hit_distribution_matrix[self.domain][:, graph_solver.target_position[
            boundary_vertices]]
        tree_solver = HarmonicSolver(self.chart, self.boundary_positions)
        self.tree_harmonic = tree_solver.hit_distribution_matrix
        self.harmonic_gap = float(np.max(np.abs(self.graph_harmonic - self.tree_harmonic)))
        self.graph_covariance = green.submatrix(self.domain)
        self.tree_boundary_covariance = self.chart.tree_green(self.boundary_positions)


def _couple(geometry, rng):
    psi = rng.multivariate_normal(np.zeros(len(geometry.domain)), geometry.graph_covariance, method='eigh')
    killed = psi - geometry.graph_harmonic @ psi[geometry.boundary_positions]
    phi_boundary = rng.multivariate_normal(np.zeros(len(geometry.boundary_positions)),
                                           geometry.tree_boundary_covariance, method='eigh')
    phi = killed + geometry.tree_harmonic @ phi_boundary
    tree_killed = phi - geometry.tree_harmonic @ phi[geometry.boundary_positions]
    residual = float(np.max(np.abs(killed - tree_killed)))
    deviation = float(np.max(np.abs(psi - phi)[geometry.inner_positions]))
    return CoupledPair(domain=geometry.domain, chart=geometry.chart, inner=geometry.domain[geometry.inner_positions],
                       psi=psi, phi=phi, killed=killed, residual=residual, sup_deviation=deviation,
                       harmonic_gap=geometry.harmonic_gap)


def couple_local(green, x, r, R, seed, x_prime=None):
    """
    Psi on B(x, R) (and B(x', R)) and phi on its chart, sharing the part killed
    outside the (R-1)-ball(s); the two boundary-harmonic parts are independent.
    """
    centres = [x] if x_prime is None else [x, x_prime]
    _check_geometry(green.graph, centres, r, R)
    geometry = _CouplingGeometry(green, centres, r, R)
    return _couple(geometry, np.random.default_rng(seed))


def chart_killed_green_gap(green, x, R, x_prime=None):
    """Max difference between g^U on the graph and on the tree chart, U the (R-1)-ball(s)."""
    centres = [x] if x_prime is None else [x, x_prime]
    chart = LocalTreeChart(green.graph, centres, R)
    U = sorted({v for c in centres for v in green.graph.ball(c, R - 1)})
    index, graph_killed = killed_green_matrix(green.graph, U)
    tree_index, tree_killed = killed_green_matrix(chart, [chart.position[v] for v in U])
    order = [chart.position[int(v)] for v in index]
    rank = {int(p): i for i, p in enumerate(tree_index)}
    perm = [rank[p] for p in order]
    return float(np.max(np.abs(graph_killed - tree_killed[np.ix_(perm, perm)])))


class DeviationTail(BaseModel):
    model_config = ConfigDict(frozen=True)

    x: int
    x_prime: Optional[int] = None
    r: int
    R: int
    replicas: int
    epsilons: list[float]
    frequencies: list[float]
    max_residual: float
    harmonic_gap: float
    deviations: list[float] = []


def _tail_replica(geometry, seed):
    pair = _couple(geometry, np.random.default_rng(seed))
    return pair.sup_deviation, pair.residual


def deviation_tail(green, x, r, R, replicas, seed, x_prime=None, epsilons=EPSILON_GRID, threads=None,
                   progress=False):
    """Empirical P[sup deviation > eps] over independent couplings, for each eps of the grid."""
    centres = [x] if x_prime is None else [x, x_prime]
    _check_geometry(green.graph, centres, r, R)
    geometry = _CouplingGeometry(green, centres, r, R)
    results = run_tasks(_tail_replica, [(geometry, child) for child in spawn_seeds(seed, replicas)],
                        threads=threads, desc='coupling', progress=progress)
    deviations = np.array([dev for dev, _ in results])
    return DeviationTail(x=x, x_prime=x_prime, r=r, R=R, replicas=replicas, epsilons=list(epsilons),
                         frequencies=[float(np.mean(deviations > eps)) for eps in epsilons],
                         deviations=deviations.tolist(),
                         max_residual=max(res for _, res in results), harmonic_gap=geometry.harmonic_gap)


class BoundaryVarianceReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    side: str
    R: int
    vertices: list[int]
    distances: list[int]
    variances: list[float]
    bounds: list[float]

    @property
    def violations(self):
        return sum(v > b for v, b in zip(self.variances, self.bounds))


def _tree_boundary_variance(ball, R):
    if not 1 <= R <= ball.depth:
        raise GeometryError(f"R must lie in [1, {ball.depth}]")
    inner = TreeBall(d=ball.d, depth=R)
    d = ball.d
    solver = HarmonicSolver(inner, inner.sphere(R))
    hit = solver.hit_distribution_matrix
    sphere_green = tree_green_matrix(inner)[np.ix_(solver.targets, solver.targets)]
    variances = np.einsum('ij,jk,ik->i', hit, sphere_green, hit)
    levels = inner.level
    bounds = d ** 2 / ((d - 1) * (d - 2)) * (1 / (d - 1)) ** (R - 2 * levels.astype(float))
    return BoundaryVarianceReport(side='tree', R=R, vertices=list(range(inner.n_vertices)),
                                  distances=levels.tolist(), variances=variances.tolist(), bounds=bounds.tolist())


def _graph_boundary_variance(green, x, R, constants):
    graph = green.graph
    d = graph.d
    if graph.tree_excess(graph.ball(x, 2 * R)) != 0:
        raise GeometryError(f"B({x}, 2R) is not tree-like")
    if constants is not None and R > constants.c0 / 6 * log_base(graph.n_vertices, d):
        raise GeometryError("R exceeds (c0/6) log_{d-1} N")
    ball = graph.ball(x, R)
    outside = sorted(set(range(graph.n_vertices)) - set(graph.ball(x, R - 1)))
    solver = HarmonicSolver(graph, outside)
    sphere = graph.sphere(x, R)
    hit = solver.hit_distribution_matrix[ball][:, solver.target_position[sphere]]
    variances = np.einsum('ij,jk,ik->i', hit, green.submatrix(sphere), hit)
    dist = graph.distances_from(x)[ball]
    bounds = 3 * d ** 2 / ((d - 1) * (d - 2)) * (1 / (d - 1)) ** (R - 2 * dist.astype(float))
    return BoundaryVarianceReport(side='graph', R=R, vertices=list(ball), distances=dist.tolist(),
                                  variances=variances.tolist(), bounds=bounds.tolist())


def boundary_variance_check(target, x, R, constants=None):
    """
    Exact Var(E_y[field at the first hit of the R-sphere]) for every y in the
    R-ball, next to its bound; `target` is a TreeBall (x ignored) or a GreenOperator.
    """
    if isinstance(target, TreeBall):
        return _tree_boundary_variance(target, R)
    return _graph_boundary_variance(target, x, R, constants)


class ProximityReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    x: int
    parent: int
    mean: float
    variance: float
    target_mean: float
    target_variance: float
    mean_gap: float
    var_gap: float


def conditional_proximity_check(green, A, x, observed, s, b=None, b_prime=None):
    """Distance between the exact conditional law at a good vertex and the tree law given its parent."""
    graph = green.graph
    A = sorted(set(A))
    observed = dict(observed) if isinstance(observed, dict) else dict(zip(A, observed))
    ln_n = math.log(graph.n_vertices)
    if b is not None and len(A) > b * ln_n:
        raise AssumptionError(f"|A| = {len(A)} exceeds b ln N = {b * ln_n:.3f}")
    if b_prime is not None and max(abs(v) for v in observed.values()) > b_prime * math.sqrt(ln_n):
        raise AssumptionError("sup of the observed values exceeds b' sqrt(ln N)")
    verdict = good_vertex_test(graph, A, x, s)
    if not verdict.is_good:
        raise GeometryError(f"vertex {x} is not a good vertex at the boundary of A ({verdict.reason})")
    mean, variance = conditional_law(green, A, observed, x)
    parent = verdict.unique_explored_neighbor
    target_mean, target_variance = tree_conditional_law(observed[parent], graph.d)
    return ProximityReport(x=x, parent=parent, mean=mean, variance=variance, target_mean=target_mean,
                           target_variance=target_variance, mean_gap=abs(mean - target_mean),
                           var_gap=abs(variance - target_variance))


def _connected_set(graph, start, size):
    order, seen, queue = [], {start}, deque([start])
    while queue and len(order) < size:
        v = queue.popleft()
        order.append(v)
        for u in graph.adjacency[v]:
            if u not in seen:
                seen.add(u)
                queue.append(u)
    return order


def good_vertex_gaps(green, set_size, replicas, seed, s):
    """Proximity gaps at every good boundary vertex of random connected sets observed under Psi."""
    graph = green.graph
    rng = np.random.default_rng(seed)
    reports = []
    for _ in range(replicas):
        A = _connected_set(graph, int(rng.integers(graph.n_vertices)), set_size)
        values = green.sample(rng)
        observed = {v: float(values[v]) for v in A}
        for x in graph.boundary(A):
            if good_vertex_test(graph, A, x, s, full=False).is_good:
                reports.append(conditional_proximity_check(green, A, x, observed, s))
    return reports
