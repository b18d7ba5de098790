"""
The d-regular tree truncated at a finite depth: Green functions, the
recursive GFF sampler, exact hitting laws, and forward level-set clusters.
"""
import logging
import math
from collections import Counter
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.csgraph

from utils import MAX_FRONTIER

from .errors import GeometryError
from .graph import tree_ball_size
from .harmonic import HarmonicSolver, killed_green

logger = logging.getLogger(__name__)


def tree_green(d, dist):
    if d < 3:
        raise ValueError("degree must be at least 3")
    return (d - 1) / (d - 2) * (1 / (d - 1)) ** dist


def tree_conditional_law(parent_value, d):
    """Law of phi(x) given phi off the forward subtree U_x: only the parent value matters."""
    return parent_value / (d - 1), d / (d - 1)


def address_distance(a, b):
    common = 0
    for u, v in zip(a, b):
        if u != v:
            break
        common += 1
    return len(a) + len(b) - 2 * common


@dataclass(frozen=True)
class TreeBall:
    """
    B(o, depth) in the d-regular tree, vertices in BFS order. The root has index
    0 and d children; every other vertex has d-1. Child 0 of the root is the
    marked neighbour o-bar, and the forward tree T+ is everything outside its branch.
    """
    d: int
    depth: int

    def __post_init__(self):
        if self.d < 3:
            raise ValueError("degree must be at least 3")
        if self.depth < 0:
            raise ValueError("depth must be non-negative")

    @cached_property
    def offsets(self):
        return np.array([0] + [tree_ball_size(self.d, k) for k in range(self.depth + 1)], dtype=np.int64)

    @property
    def n_vertices(self):
        return int(self.offsets[-1])

    @cached_property
    def level(self):
        return np.repeat(np.arange(self.depth + 1), np.diff(self.offsets))

    @cached_property
    def parent(self):
        parent = np.full(self.n_vertices, -1, dtype=np.int64)
        for k in range(1, self.depth + 1):
            j = np.arange(self.offsets[k + 1] - self.offsets[k])
            parent[self.offsets[k]:self.offsets[k + 1]] = 0 if k == 1 else self.offsets[k - 1] + j // (self.d - 1)
        return parent

    @cached_property
    def branch(self):
        """First address index of every vertex (-1 at the root)."""
        branch = np.full(self.n_vertices, -1, dtype=np.int64)
        for k in range(1, self.depth + 1):
            j = np.arange(self.offsets[k + 1] - self.offsets[k])
            branch[self.offsets[k]:self.offsets[k + 1]] = j // (self.d - 1) ** (k - 1)
        return branch

    @cached_property
    def is_forward(self):
        return self.branch != 0

    def sphere(self, k):
        return np.arange(self.offsets[k], self.offsets[k + 1])

    def forward_sphere(self, k):
        vertices = self.sphere(k)
        return vertices[self.is_forward[vertices]]

    def ball(self, r):
        return np.arange(self.offsets[min(r, self.depth) + 1])

    def children(self, v):
        k = int(self.level[v])
        if k == self.depth:
            return np.zeros(0, dtype=np.int64)
        if k == 0:
            return self.offsets[1] + np.arange(self.d)
        start = self.offsets[k + 1] + (v - self.offsets[k]) * (self.d - 1)
        return start + np.arange(self.d - 1)

    def neighbors(self, v):
        result = list(self.children(v))
        if v != 0:
            result.insert(0, int(self.parent[v]))
        return [int(u) for u in result]

    def address(self, v):
        k = int(self.level[v])
        j = int(v - self.offsets[k])
        digits = []
        for _ in range(k - 1):
            j, rest = divmod(j, self.d - 1)
            digits.append(rest)
        if k >= 1:
            digits.append(j)
        return tuple(reversed(digits))

    def index_of(self, address):
        k = len(address)
        if k > self.depth:
            raise GeometryError(f"address of length {k} is beyond depth {self.depth}")
        if k == 0:
            return 0
        if not 0 <= address[0] < self.d or any(not 0 <= a < self.d - 1 for a in address[1:]):
            raise ValueError(f"invalid tree address {address}")
        j = address[0]
        for a in address[1:]:
            j = j * (self.d - 1) + a
        return int(self.offsets[k] + j)

    def distance(self, u, v):
        return address_distance(self.address(u), self.address(v))

    @cached_property
    def adjacency_matrix(self):
        child = np.arange(1, self.n_vertices)
        rows = np.concatenate([child, self.parent[1:]])
        cols = np.concatenate([self.parent[1:], child])
        return scipy.sparse.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(self.n_vertices, self.n_vertices))

    def transition_matrix(self):
        return self.adjacency_matrix / self.d

    def distances_from(self, v):
        dist = scipy.sparse.csgraph.shortest_path(self.adjacency_matrix, unweighted=True, indices=v)
        return dist.astype(np.int64)

    def subtree(self, v, max_level=None):
        """Descendants of v including v (the forward subtree U_v), down to `max_level`."""
        max_level = self.depth if max_level is None else max_level
        result, layer = [], [int(v)]
        while layer and self.level[layer[0]] <= max_level:
            result.extend(layer)
            layer = [int(c) for u in layer for c in self.children(u)]
        return result


@dataclass(frozen=True, eq=False)
class TreeField:
    ball: TreeBall
    values: np.ndarray
    root_condition: float = None

    def __post_init__(self):
        if len(self.values) != self.ball.n_vertices:
            raise ValueError("tree field must have one value per vertex")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("tree field values must be finite")
        if self.root_condition is not None and self.values[0] != self.root_condition:
            raise ValueError("pinned root value does not match the field")


def killed_tree_green(ball, U, x, y):
    U = set(int(u) for u in U)
    if any(ball.level[u] >= ball.depth for u in U):
        raise GeometryError("U touches the truncation boundary, exits are not observable")
    return killed_green(ball, U, x, y)


def _sample_levels(ball, rng, replicas, root_condition):
    d = ball.d
    values = np.empty((replicas, ball.n_vertices))
    if root_condition is None:
        values[:, 0] = rng.standard_normal(replicas) * math.sqrt((d - 1) / (d - 2))
    else:
        values[:, 0] = root_condition
    step = math.sqrt(d / (d - 1))
    for k in range(1, ball.depth + 1):
        lo, hi = ball.offsets[k], ball.offsets[k + 1]
        parents = ball.parent[lo:hi]
        values[:, lo:hi] = values[:, parents] / (d - 1) + step * rng.standard_normal((replicas, hi - lo))
    return values


def sample_tree_gff(ball, root_condition=None, seed=None):
    """phi(o) ~ N(0, (d-1)/(d-2)) or pinned; phi(x) = phi(parent)/(d-1) + N(0, d/(d-1)) independently."""
    rng = np.random.default_rng(seed)
    values = _sample_levels(ball, rng, 1, root_condition)[0]
    return TreeField(ball=ball, values=values, root_condition=root_condition)


def sample_tree_gff_batch(ball, replicas, seed, root_condition=None):
    rng = np.random.default_rng(seed)
    return _sample_levels(ball, rng, replicas, root_condition)


def tree_green_matrix(ball):
    dist = scipy.sparse.csgraph.shortest_path(ball.adjacency_matrix, unweighted=True)
    return tree_green(ball.d, dist)


def sample_tree_gff_dense(ball, replicas, seed):
    """Reference sampler: Cholesky factor of the tree Green function on the ball."""
    rng = np.random.default_rng(seed)
    chol = scipy.linalg.cholesky(tree_green_matrix(ball), lower=True)
    return rng.standard_normal((replicas, ball.n_vertices)) @ chol.T


def hitting_distribution_sphere(ball, y, R):
    """Exact law of the first point of S(o, R) hit from y, as {vertex: probability}."""
    if R > ball.depth:
        raise GeometryError(f"sphere radius {R} exceeds the truncation depth {ball.depth}")
    if ball.level[y] > R:
        raise ValueError(f"vertex {y} is outside B(o, {R})")
    inner = TreeBall(d=ball.d, depth=R)
    solver = HarmonicSolver(inner, inner.sphere(R))
    return solver.hit_distribution(int(y))


def sphere_distance_counts(ball, R, z1):
    """Number of vertices of S(o, R) at each distance from z1."""
    dist = ball.distances_from(z1)
    return dict(sorted(Counter(int(v) for v in dist[ball.sphere(R)]).items()))


@dataclass(frozen=True, eq=False)
class ForwardCluster:
    vertices: np.ndarray
    level_counts: np.ndarray
    censored: bool

    @property
    def size(self):
        return int(self.level_counts.sum())


def forward_cluster(field, h):
    """Component of {phi >= h} containing o, intersected with T+, with its size on every sphere."""
    ball = field.ball
    inside = np.zeros(ball.n_vertices, dtype=bool)
    inside[0] = field.values[0] >= h
    above = (field.values >= h) & ball.is_forward
    for k in range(1, ball.depth + 1):
        lo, hi = ball.offsets[k], ball.offsets[k + 1]
        inside[lo:hi] = inside[ball.parent[lo:hi]] & above[lo:hi]
    counts = np.bincount(ball.level[inside], minlength=ball.depth + 1)
    return ForwardCluster(vertices=np.flatnonzero(inside), level_counts=counts,
                          censored=bool(ball.depth > 0 and counts[-1] > 0))


@dataclass(frozen=True, eq=False)
class ClusterLevels:
    """Sizes of the root cluster on every sphere of a lazily generated tree."""
    counts: np.ndarray
    root_value: float
    censored: bool
    saturated: bool = False

    @property
    def size(self):
        return float(self.counts.sum())

    @property
    def survived(self):
        return bool(self.counts[-1] > 0)


def simulate_cluster_levels(d, h, depth, rng, root_value=None, forward=True, max_frontier=MAX_FRONTIER):
    """
    Grow the level-set cluster of the root one sphere at a time, generating
    children only of vertices already in the cluster. Above `max_frontier`
    vertices the frontier is subsampled and counts carry the inverse sampling weight.
    """
    if root_value is None:
        root_value = rng.standard_normal() * math.sqrt((d - 1) / (d - 2))
    counts = np.zeros(depth + 1)
    if root_value < h:
        return ClusterLevels(counts=counts, root_value=float(root_value), censored=False)
    counts[0] = 1.0
    frontier = np.array([root_value])
    weight, saturated = 1.0, False
    step = math.sqrt(d / (d - 1))
    for k in range(1, depth + 1):
        branching = d if (k == 1 and not forward) else d - 1
        parents = np.repeat(frontier, branching)
        values = parents / (d - 1) + step * rng.standard_normal(len(parents))
        frontier = values[values >= h]
        if len(frontier) > max_frontier:
            weight *= len(frontier) / max_frontier
            frontier = rng.choice(frontier, size=max_frontier, replace=False)
            saturated = True
        counts[k] = weight * len(frontier)
        if len(frontier) == 0:
            break
    return ClusterLevels(counts=counts, root_value=float(root_value), censored=bool(counts[-1] > 0),
                         saturated=saturated)
