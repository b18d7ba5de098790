"""
Finite d-regular graphs: representation, configuration-model generation,
assumption auditing, cover-tree charts and non-backtracking path counting.
"""
import logging
import math
import os
from collections import Counter, deque
from dataclasses import dataclass
from functools import cached_property

import networkx as nx
import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.csgraph
import scipy.sparse.linalg
from pydantic import BaseModel, ConfigDict, Field
from tenacity import RetryError, Retrying, retry_if_exception_type, stop_after_attempt

from utils import DENSE_THRESHOLD, KERNEL_TOL, LANCZOS_TOL, RETRY_FACTOR

from .errors import AssumptionError, GenerationError, GraphFormatError, UnsupportedStructureError

logger = logging.getLogger(__name__)


def log_base(value, d):
    return math.log(value) / math.log(d - 1)


def goodness_radius(n, d):
    """s_n = max(1, floor(8 log_{d-1}(log_{d-1} N)))."""
    inner = log_base(n, d)
    if inner <= 1:
        return 1
    return max(1, int(math.floor(8 * log_base(inner, d) + 1e-9)))


def tree_ball_size(d, r):
    """Number of vertices of a ball of radius r in the d-regular tree."""
    return (d * (d - 1) ** r - 2) // (d - 2)


@dataclass(frozen=True)
class RegularGraph:
    d: int
    adjacency: tuple

    def __post_init__(self):
        if self.d < 3:
            raise GraphFormatError(f"degree must be at least 3, got {self.d}")
        n = len(self.adjacency)
        if n < self.d + 1:
            raise GraphFormatError(f"need at least d+1={self.d + 1} vertices, got {n}")
        for v, nbrs in enumerate(self.adjacency):
            if len(nbrs) != self.d:
                raise GraphFormatError(f"vertex {v} has {len(nbrs)} neighbours, expected {self.d}")
            if list(nbrs) != sorted(nbrs):
                raise GraphFormatError(f"adjacency list of vertex {v} is not sorted")
            if nbrs and (nbrs[0] < 0 or nbrs[-1] >= n):
                raise GraphFormatError(f"vertex {v} has a neighbour outside 0..{n - 1}")
            if nbrs.count(v) % 2:
                raise GraphFormatError(f"self-loop at vertex {v} must contribute two endpoints")
        for v, nbrs in enumerate(self.adjacency):
            for u, mult in Counter(nbrs).items():
                if u != v and self.adjacency[u].count(v) != mult:
                    raise GraphFormatError(f"adjacency is not symmetric between {v} and {u}")

    @classmethod
    def from_edges(cls, d, n, edges):
        adjacency = [[] for _ in range(n)]
        for u, v in edges:
            adjacency[u].append(v)
            adjacency[v].append(u)
        return cls(d=d, adjacency=tuple(tuple(sorted(nbrs)) for nbrs in adjacency))

    @classmethod
    def from_networkx(cls, graph):
        mapping = {node: i for i, node in enumerate(sorted(graph.nodes()))}
        edges = [(mapping[u], mapping[v]) for u, v in graph.edges()]
        degrees = {deg for _, deg in graph.degree()}
        if len(degrees) != 1:
            raise GraphFormatError("networkx graph is not regular")
        return cls.from_edges(degrees.pop(), graph.number_of_nodes(), edges)

    @property
    def n_vertices(self):
        return len(self.adjacency)

    def neighbors(self, v):
        return self.adjacency[v]

    def edges(self):
        """Every edge once, as (u, v) with u <= v; multi-edges repeated."""
        result = []
        for v, nbrs in enumerate(self.adjacency):
            for u, mult in sorted(Counter(nbrs).items()):
                if v < u:
                    result.extend([(v, u)] * mult)
                elif v == u:
                    result.extend([(v, v)] * (mult // 2))
        return result

    @cached_property
    def is_simple(self):
        return all(len(set(nbrs)) == len(nbrs) and v not in nbrs for v, nbrs in enumerate(self.adjacency))

    @cached_property
    def adjacency_matrix(self):
        n = self.n_vertices
        rows = np.repeat(np.arange(n), self.d)
        cols = np.fromiter((u for nbrs in self.adjacency for u in nbrs), dtype=np.int64, count=n * self.d)
        return scipy.sparse.csr_matrix((np.ones(n * self.d), (rows, cols)), shape=(n, n))

    def transition_matrix(self):
        return self.adjacency_matrix / self.d

    @cached_property
    def is_connected(self):
        n_components, _ = scipy.sparse.csgraph.connected_components(self.adjacency_matrix, directed=False)
        return n_components == 1

    def distances_from(self, sources, radius=None):
        """BFS distances from a vertex or a set of vertices; -1 beyond `radius` or unreachable."""
        if isinstance(sources, (int, np.integer)):
            sources = [int(sources)]
        dist = np.full(self.n_vertices, -1, dtype=np.int64)
        queue = deque()
        for s in sources:
            if dist[s] < 0:
                dist[s] = 0
                queue.append(s)
        while queue:
            v = queue.popleft()
            if radius is not None and dist[v] >= radius:
                continue
            for u in self.adjacency[v]:
                if dist[u] < 0:
                    dist[u] = dist[v] + 1
                    queue.append(u)
        return dist

    def distance(self, x, y):
        return int(self.distances_from(x)[y])

    def ball(self, x, r):
        dist = self.distances_from(x, radius=r)
        return [int(v) for v in np.flatnonzero(dist >= 0)]

    def sphere(self, x, r):
        dist = self.distances_from(x, radius=r)
        return [int(v) for v in np.flatnonzero(dist == r)]

    def boundary(self, vertices):
        """Outer vertex boundary: vertices outside the set with a neighbour inside."""
        inside = set(vertices)
        return sorted({u for v in inside for u in self.adjacency[v] if u not in inside})

    def induced_edge_count(self, vertices):
        inside = set(vertices)
        endpoints = sum(1 for v in inside for u in self.adjacency[v] if u in inside)
        return endpoints // 2

    def tree_excess(self, vertices):
        """Edges of the induced subgraph minus vertices plus number of components; 0 iff a forest."""
        vertices = sorted(set(vertices))
        if not vertices:
            return 0
        index = {v: i for i, v in enumerate(vertices)}
        rows, cols = [], []
        for v in vertices:
            for u in self.adjacency[v]:
                if u in index:
                    rows.append(index[v])
                    cols.append(index[u])
        sub = scipy.sparse.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(vertices), len(vertices)))
        n_components, _ = scipy.sparse.csgraph.connected_components(sub, directed=False)
        return self.induced_edge_count(vertices) - len(vertices) + n_components

    def ball_is_simple(self, vertices):
        inside = set(vertices)
        for v in inside:
            nbrs = [u for u in self.adjacency[v] if u in inside]
            if v in nbrs or len(set(nbrs)) != len(nbrs):
                return False
        return True

    def to_networkx(self):
        graph = nx.MultiGraph()
        graph.add_nodes_from(range(self.n_vertices))
        graph.add_edges_from(self.edges())
        return graph

    def relabel(self, permutation):
        """Graph with vertex v renamed permutation[v]."""
        return RegularGraph.from_edges(self.d, self.n_vertices,
                                       [(int(permutation[u]), int(permutation[v])) for u, v in self.edges()])


class _PairingRejected(Exception):
    pass


def _pair_stubs(d, n, rng):
    stubs = np.repeat(np.arange(n), d)
    rng.shuffle(stubs)
    pairs = np.sort(stubs.reshape(-1, 2), axis=1)
    if np.any(pairs[:, 0] == pairs[:, 1]):
        raise _PairingRejected("self-loop")
    if len(np.unique(pairs, axis=0)) < len(pairs):
        raise _PairingRejected("parallel edge")
    return pairs


def generate_random_regular(d, n, seed, max_attempts=None):
    """
    Simple d-regular graph on n vertices from the configuration model,
    restarting the whole pairing whenever a self-loop or a parallel edge appears.
    """
    if (n * d) % 2 != 0:
        raise ValueError("n * d must be even")
    if not 3 <= d < n:
        raise ValueError("the 3 <= d < n inequality must be satisfied")
    if max_attempts is None:
        max_attempts = RETRY_FACTOR * n
    rng = np.random.default_rng(seed)
    try:
        for attempt in Retrying(stop=stop_after_attempt(max_attempts),
                                retry=retry_if_exception_type(_PairingRejected)):
            with attempt:
                pairs = _pair_stubs(d, n, rng)
    except RetryError as e:
        raise GenerationError(f"no simple pairing for d={d}, n={n} after {max_attempts} attempts") from e
    logger.debug('generated d=%d n=%d graph after %d attempts', d, n, attempt.retry_state.attempt_number)
    return RegularGraph.from_edges(d, n, pairs.tolist())


def save_graph(graph, output_path):
    os.makedirs(os.path.dirname(output_path) or '.', exist_ok=True)
    with open(output_path, 'w', encoding='utf-8') as write_file:
        write_file.write(f'{graph.d} {graph.n_vertices}\n')
        for v, nbrs in enumerate(graph.adjacency):
            write_file.write(f'{v}: ' + ' '.join(str(u) for u in nbrs) + '\n')


def load_graph(graph_path):
    with open(graph_path, 'r', encoding='utf-8') as load_file:
        lines = [line.strip() for line in load_file if line.strip()]
    try:
        d, n = (int(token) for token in lines[0].split())
    except (IndexError, ValueError) as e:
        raise GraphFormatError("first line must be 'd N'") from e
    if len(lines) != n + 1:
        raise GraphFormatError(f"expected {n} vertex lines, found {len(lines) - 1}")
    adjacency = []
    for v, line in enumerate(lines[1:]):
        head, _, tail = line.partition(':')
        if not _ or int(head) != v:
            raise GraphFormatError(f"line for vertex {v} must start with '{v}:'")
        adjacency.append(tuple(int(token) for token in tail.split()))
    return RegularGraph(d=d, adjacency=tuple(adjacency))


def spectral_gap(graph, dense_threshold=DENSE_THRESHOLD):
    """
    Second smallest eigenvalue of I - P, i.e. the smallest non-zero one when the
    graph is connected (and 0 otherwise).
    """
    n = graph.n_vertices
    if n <= dense_threshold:
        laplacian = np.eye(n) - graph.transition_matrix().toarray()
        eigenvalues = scipy.linalg.eigvalsh(laplacian)
        return float(max(eigenvalues[1], 0.0))
    top = scipy.sparse.linalg.eigsh(graph.adjacency_matrix, k=2, which='LA', tol=LANCZOS_TOL,
                                    return_eigenvectors=False)
    return float(max(1.0 - np.sort(top)[0] / graph.d, 0.0))


class AssumptionReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    alpha: float = Field(gt=0, le=1)
    beta: float = Field(gt=0, le=2)
    n_vertices: int
    d: int
    radius_checked: int
    max_tree_excess_in_ball: int
    simple: bool
    connected: bool
    spectral_gap: float
    passes: tuple[bool, bool, bool]

    @property
    def all_pass(self):
        return all(self.passes)


def audit_radius(n, d, alpha):
    return int(math.floor(alpha * log_base(n, d) + 1e-9))


def audit_assumptions(graph, alpha, beta, dense_threshold=DENSE_THRESHOLD):
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    if not 0 < beta <= 2:
        raise ValueError("beta must lie in (0, 2]")
    n, d = graph.n_vertices, graph.d
    radius = audit_radius(n, d, alpha)
    max_excess = 0
    for x in range(n):
        max_excess = max(max_excess, graph.tree_excess(graph.ball(x, radius)))
    connected = graph.is_connected
    gap = spectral_gap(graph, dense_threshold=dense_threshold)
    passes = (connected, graph.is_simple and max_excess <= 1, gap >= beta)
    logger.info('audit N=%d d=%d radius=%d max_tx=%d gap=%.6f passes=%s', n, d, radius, max_excess, gap, passes)
    return AssumptionReport(alpha=alpha, beta=beta, n_vertices=n, d=d, radius_checked=radius,
                            max_tree_excess_in_ball=max_excess, simple=graph.is_simple, connected=connected,
                            spectral_gap=gap, passes=passes)


@dataclass(frozen=True)
class ScaleConstants:
    d: int
    n: int
    alpha: float
    beta: float
    spectral_gap: float = None

    def __post_init__(self):
        if not 0 < self.alpha <= 1 or not 0 < self.beta <= 2:
            raise ValueError("alpha must lie in (0, 1] and beta in (0, 2]")
        if not 0 < self.c0 < 1:
            raise ValueError(f"c0 = alpha*beta/(d-1) = {self.c0} must lie in (0, 1)")

    @classmethod
    def from_graph(cls, n, d, alpha, beta, spectral_gap=None):
        return cls(d=d, n=n, alpha=alpha, beta=beta, spectral_gap=spectral_gap)

    @classmethod
    def from_report(cls, report):
        return cls(d=report.d, n=report.n_vertices, alpha=report.alpha, beta=report.beta,
                   spectral_gap=report.spectral_gap)

    @property
    def c0(self):
        return self.alpha * self.beta / (self.d - 1)

    @property
    def log_n(self):
        return log_base(self.n, self.d)

    @property
    def r_n(self):
        return max(1, int(math.floor(self.c0 / 18 * self.log_n + 1e-9)))

    @property
    def R_n(self):
        return max(1, int(math.floor(self.c0 / 6 * self.log_n + 1e-9)))

    @property
    def s_n(self):
        return goodness_radius(self.n, self.d)

    @property
    def t_n(self):
        if self.spectral_gap is None or self.spectral_gap <= 0:
            raise AssumptionError("t_n needs a positive spectral gap")
        return math.log(self.n) ** 2 / self.spectral_gap

    def gamma_h(self, lambda_h):
        """Mesoscopic exponent c0/20 * log_{d-1}(lambda_h); non-positive for lambda_h <= 1."""
        return self.c0 / 20 * log_base(lambda_h, self.d)

    def anomaly_threshold(self, c_kappa):
        return c_kappa * math.sqrt(math.log(self.n))

    def as_dict(self):
        result = {'d': self.d, 'n': self.n, 'alpha': self.alpha, 'beta': self.beta, 'c0': self.c0,
                  'r_n': self.r_n, 'R_n': self.R_n, 's_n': self.s_n}
        if self.spectral_gap is not None and self.spectral_gap > 0:
            result['t_n'] = self.t_n
        return result


class CoverChart:
    """
    Canonical cover tree pi_{n,x}: tree addresses are tuples of child indices,
    the root has d children and every other vertex d-1; child i of a vertex is the
    i-th entry of the sorted neighbour list with one copy of the parent removed.
    """

    def __init__(self, graph, root):
        self.graph = graph
        self.root = root
        self._images = {(): root}

    def image(self, address):
        address = tuple(address)
        if address in self._images:
            return self._images[address]
        parent_address = address[:-1]
        vertex = self.image(parent_address)
        previous = self.image(parent_address[:-1]) if parent_address else None
        nbrs = list(self.graph.adjacency[vertex])
        if previous is not None:
            nbrs.remove(previous)
        i = address[-1]
        if not 0 <= i < len(nbrs):
            raise ValueError(f"child index {i} out of range at address {parent_address}")
        self._images[address] = nbrs[i]
        return nbrs[i]

    def n_children(self, address):
        return self.graph.d if len(address) == 0 else self.graph.d - 1

    def addresses_at_depth(self, depth, first_choices=None):
        """All addresses of the given depth in lexicographic order (optionally restricting the first index)."""
        layer = [()]
        for k in range(depth):
            nxt = []
            for address in layer:
                choices = range(self.n_children(address))
                if k == 0 and first_choices is not None:
                    choices = [i for i in choices if i in first_choices]
                nxt.extend(address + (i,) for i in choices)
            layer = nxt
        return layer

    def forward_sphere(self, r):
        """pi_{n,x}(S^+(o, r)): images of depth-r addresses avoiding the marked child 0 of the root."""
        if r == 0:
            return {self.root}
        first = range(1, self.graph.d)
        return {self.image(address) for address in self.addresses_at_depth(r, first_choices=set(first))}

    def minimal_preimage(self, target):
        """Lexicographically smallest address of minimal depth mapped onto `target`."""
        to_target = self.graph.distances_from(target)
        if to_target[self.root] < 0:
            raise AssumptionError("target is not reachable from the chart root")
        address = ()
        while self.image(address) != target:
            for i in range(self.n_children(address)):
                child = address + (i,)
                if to_target[self.image(child)] == to_target[self.image(address)] - 1:
                    address = child
                    break
        return address


def cover_tree_image(graph, x, address):
    return CoverChart(graph, x).image(address)


def ball_cycle_length(graph, x, R):
    """Length of the unique cycle of B(x, R) when its tree excess is exactly one."""
    ball = graph.ball(x, R)
    if graph.tree_excess(ball) != 1:
        raise UnsupportedStructureError("ball does not contain exactly one cycle")
    sub = nx.Graph(graph.to_networkx().subgraph(ball))
    return len(nx.cycle_basis(sub)[0])


def count_nonbacktracking_paths(graph, x, y, R, window):
    """Number of non-backtracking paths from x to y inside B(x, R) whose length lies in [k, k+l)."""
    k, k_end = window
    ball = graph.ball(x, R)
    inside = set(ball)
    if y not in inside:
        raise ValueError(f"vertex {y} is not in B({x}, {R})")
    if not graph.ball_is_simple(ball):
        raise UnsupportedStructureError("ball contains a self-loop or a parallel edge")
    if graph.tree_excess(ball) >= 2:
        raise UnsupportedStructureError("ball has tree excess at least 2")
    count = 0
    stack = [(x, None, 0)]
    while stack:
        v, previous, length = stack.pop()
        if v == y and k <= length < k_end:
            count += 1
        if length + 1 >= k_end:
            continue
        for u in graph.adjacency[v]:
            if u != previous and u in inside:
                stack.append((u, v, length + 1))
    return count
