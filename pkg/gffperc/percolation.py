"""
Level sets of a graph field, their connected components, and the census
statistics of mesoscopic clusters.
"""
import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse.csgraph
from pydantic import BaseModel, ConfigDict

from .errors import GeometryError
from .graph import CoverChart, tree_ball_size
from .tree import simulate_cluster_levels

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ComponentDecomposition:
    """Components of {x : field(x) >= h}; label -1 outside the level set, else the smallest vertex of the component."""
    level: float
    labels: np.ndarray

    @cached_property
    def component_sizes(self):
        """label -> size."""
        present = self.labels[self.labels >= 0]
        roots, sizes = np.unique(present, return_counts=True)
        return dict(zip(roots.tolist(), sizes.tolist()))

    @property
    def sizes(self):
        return sorted(self.component_sizes.values(), reverse=True)

    @property
    def max_size(self):
        sizes = self.sizes
        return sizes[0] if sizes else 0

    @property
    def second_size(self):
        sizes = self.sizes
        return sizes[1] if len(sizes) > 1 else 0

    def component_of(self, x):
        if self.labels[x] < 0:
            return []
        return np.flatnonzero(self.labels == self.labels[x]).tolist()

    def cluster_size(self, x):
        if self.labels[x] < 0:
            return 0
        return self.component_sizes[int(self.labels[x])]

    def cluster_sizes(self):
        """|C_x| for every vertex (0 outside the level set)."""
        result = np.zeros(len(self.labels), dtype=np.int64)
        inside = self.labels >= 0
        lookup = self.component_sizes
        result[inside] = [lookup[int(label)] for label in self.labels[inside]]
        return result


def level_components(field, h, graph=None):
    """Connected components of the level set above h; `field` is a GraphField or a value array with `graph`."""
    if graph is None:
        graph, values = field.graph, np.asarray(field.values)
    else:
        values = np.asarray(field)
    inside = np.flatnonzero(values >= h)
    labels = np.full(graph.n_vertices, -1, dtype=np.int64)
    if len(inside):
        sub = graph.adjacency_matrix[inside][:, inside]
        _, raw = scipy.sparse.csgraph.connected_components(sub, directed=False)
        smallest = np.full(raw.max() + 1, np.iinfo(np.int64).max, dtype=np.int64)
        np.minimum.at(smallest, raw, inside)
        labels[inside] = smallest[raw]
    return ComponentDecomposition(level=float(h), labels=labels)


class CensusGeometry:
    """Field-independent part of the census: forward spheres, tree-like vertices and overlapping pairs."""

    def __init__(self, graph, constants):
        self.graph = graph
        self.constants = constants
        r_n, R_n = constants.r_n, constants.R_n
        self.forward_spheres = [np.fromiter(sorted(CoverChart(graph, x).forward_sphere(r_n)), dtype=np.int64)
                                for x in range(graph.n_vertices)]
        self.tree_like = np.array([graph.tree_excess(graph.ball(x, 2 * R_n)) == 0 for x in range(graph.n_vertices)])
        self.overlapping_pairs = int(sum(len(graph.ball(x, 4 * R_n)) for x in range(graph.n_vertices)))
        logger.debug('census geometry r_n=%d R_n=%d tree-like=%d/%d', r_n, R_n, self.tree_like.sum(), graph.n_vertices)

    @property
    def tree_like_fraction(self):
        return float(self.tree_like.mean())

    def overlapping_pairs_bound(self):
        """N |B_T(o, 4R_n)|, the count for a graph whose 4R_n-balls are all tree-like."""
        return self.graph.n_vertices * tree_ball_size(self.graph.d, 4 * self.constants.R_n)


class MesoscopicCensus(BaseModel):
    model_config = ConfigDict(frozen=True)

    n_vertices: int
    h: float
    gamma: float
    threshold: float
    sphere_count: int
    component_count: int
    tree_like_fraction: float
    overlapping_pairs: int
    overlapping_pairs_bound: int
    max_size: int
    second_size: int


def sphere_cluster_counts(decomposition, geometry):
    """|C_x intersected with S+(x, r_n)| for every vertex."""
    labels = decomposition.labels
    result = np.zeros(len(labels), dtype=np.int64)
    for x in np.flatnonzero(labels >= 0):
        result[x] = int(np.count_nonzero(labels[geometry.forward_spheres[x]] == labels[x]))
    return result


def mesoscopic_census(field, h, constants, gamma, geometry=None):
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    graph = field.graph
    if geometry is None:
        geometry = CensusGeometry(graph, constants)
    decomposition = level_components(field, h)
    threshold = graph.n_vertices ** gamma
    return MesoscopicCensus(
        n_vertices=graph.n_vertices, h=h, gamma=gamma, threshold=threshold,
        sphere_count=int(np.count_nonzero(sphere_cluster_counts(decomposition, geometry) >= threshold)),
        component_count=int(np.count_nonzero(decomposition.cluster_sizes() >= threshold)),
        tree_like_fraction=geometry.tree_like_fraction,
        overlapping_pairs=geometry.overlapping_pairs,
        overlapping_pairs_bound=geometry.overlapping_pairs_bound(),
        max_size=decomposition.max_size, second_size=decomposition.second_size)


class PairEventReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    x: int
    x_prime: int
    h: float
    gamma: float
    epsilon: float
    replicas: int
    joint_frequency: float
    tree_probability: float
    tree_probability_squared: float


def pair_event_check(green, x, x_prime, h, gamma, constants, epsilon, replicas, seed):
    """
    Joint frequency of the sphere events at two far-apart tree-like vertices,
    next to the squared tree probability of the same event at level h - epsilon.
    """
    graph = green.graph
    R_n, r_n = constants.R_n, constants.r_n
    ball_x, ball_y = set(graph.ball(x, 2 * R_n)), set(graph.ball(x_prime, 2 * R_n))
    if graph.tree_excess(ball_x) or graph.tree_excess(ball_y):
        raise GeometryError("both 2R_n-balls must be tree-like")
    if ball_x & ball_y:
        raise GeometryError("the 2R_n-balls around the two vertices intersect")
    threshold = graph.n_vertices ** gamma
    spheres = [np.fromiter(sorted(CoverChart(graph, v).forward_sphere(r_n)), dtype=np.int64) for v in (x, x_prime)]
    rng = np.random.default_rng(seed)
    joint = 0
    for values in green.sample_batch(rng, replicas):
        labels = level_components(values, h, graph=graph).labels
        hits = [labels[v] >= 0 and np.count_nonzero(labels[s] == labels[v]) >= threshold
                for v, s in zip((x, x_prime), spheres)]
        joint += all(hits)
    tree_hits = 0
    for _ in range(replicas):
        levels = simulate_cluster_levels(graph.d, h - epsilon, r_n, rng, forward=True)
        tree_hits += levels.counts[r_n] >= threshold
    tree_probability = tree_hits / replicas
    logger.info('pair event joint=%.4f tree^2=%.4f', joint / replicas, tree_probability ** 2)
    return PairEventReport(x=x, x_prime=x_prime, h=h, gamma=gamma, epsilon=epsilon, replicas=replicas,
                           joint_frequency=joint / replicas, tree_probability=tree_probability,
                           tree_probability_squared=tree_probability ** 2)


def non_tree_like_bound(n, d, alpha):
    """(d-1) N^{1 - 2 alpha / 3}, the bound on vertices whose 2R_n-ball has a cycle."""
    return (d - 1) * n ** (1 - 2 * alpha / 3)


def overlapping_pairs_upper(n, d):
    return d * n ** (5 / 3)
