"""
Two-queue exploration of the level-set cluster of a vertex, generating the
field only where the exploration looks, from exact conditional Gaussian laws.
"""
import logging
import math
from collections import deque
from dataclasses import dataclass

import numpy as np
import scipy.stats
from pydantic import BaseModel, ConfigDict

from utils import DEFAULT_C1, DEFAULT_C_KAPPA, DEFAULT_K

from .errors import CheckFailed
from .graph import goodness_radius
from .parallel import run_tasks, spawn_seeds
from .tree import simulate_cluster_levels
from .zagff import IncrementalConditioner

logger = logging.getLogger(__name__)

MULTI_NEIGHBOR = 'multi-neighbor'
TREE_EXCESS = 'tree-excess'
BOUNDARY_PATH = 'boundary-path'

STOP_CAP = 'cap'
STOP_EMPTY = 'empty-queues'


@dataclass(frozen=True)
class GoodVertexVerdict:
    is_good: bool
    unique_explored_neighbor: int = None
    region: tuple = ()
    reason: str = None


class DistanceToSet:
    """d(., A) truncated at `radius`, maintained while A grows."""

    def __init__(self, graph, radius):
        self.graph = graph
        self.radius = radius
        self.dist = np.full(graph.n_vertices, radius + 1, dtype=np.int64)

    def add(self, v):
        if self.dist[v] == 0:
            return
        self.dist[v] = 0
        queue = deque([v])
        while queue:
            u = queue.popleft()
            if self.dist[u] >= self.radius:
                continue
            for w in self.graph.adjacency[u]:
                if self.dist[w] > self.dist[u] + 1:
                    self.dist[w] = self.dist[u] + 1
                    queue.append(w)

    @classmethod
    def of(cls, graph, vertices, radius):
        result = cls(graph, radius)
        for v in vertices:
            result.add(v)
        return result


def _free_region(graph, distance, x, full):
    """
    BFS from x inside B(A, s) minus A. Returns (region, has_cycle, other_boundary_vertex);
    without `full` it stops at the first violation found.
    """
    parent = {x: None}
    order, queue = [x], deque([x])
    has_cycle, other_boundary = False, None
    while queue:
        v = queue.popleft()
        skipped_parent = False
        for u in graph.adjacency[v]:
            if distance.dist[u] == 0 or distance.dist[u] > distance.radius:
                continue
            if u == parent[v] and not skipped_parent:
                skipped_parent = True
                continue
            if u in parent:
                has_cycle = True
            else:
                parent[u] = v
                order.append(u)
                queue.append(u)
                if distance.dist[u] == 1 and other_boundary is None:
                    other_boundary = u
            if not full and (has_cycle or other_boundary is not None):
                return order, has_cycle, other_boundary
    return order, has_cycle, other_boundary


def _verdict(graph, A, distance, x, full):
    if distance.dist[x] != 1:
        raise ValueError(f"vertex {x} is not on the outer boundary of the explored set")
    explored = sorted({u for u in graph.adjacency[x] if u in A})
    if len(explored) != 1:
        return GoodVertexVerdict(is_good=False, reason=MULTI_NEIGHBOR)
    region, has_cycle, other_boundary = _free_region(graph, distance, x, full)
    parent = explored[0]
    if has_cycle:
        return GoodVertexVerdict(is_good=False, unique_explored_neighbor=parent, region=tuple(sorted(region)),
                                 reason=TREE_EXCESS)
    if other_boundary is not None:
        return GoodVertexVerdict(is_good=False, unique_explored_neighbor=parent, region=tuple(sorted(region)),
                                 reason=BOUNDARY_PATH)
    return GoodVertexVerdict(is_good=True, unique_explored_neighbor=parent, region=tuple(sorted(region)))


def good_vertex_test(graph, A, x, s, full=True):
    """
    Whether x is a good vertex at the boundary of A: a single explored neighbour,
    a tree-like free region F_A(x, s), and no other boundary vertex of A inside it.
    """
    A = set(A)
    return _verdict(graph, A, DistanceToSet.of(graph, A, s), x, full)


class ExplorationState:
    """Mutable state of one exploration run; `check` asserts its structural invariants."""

    def __init__(self, graph, start, cap, s):
        self.graph = graph
        self.start = start
        self.cap = cap
        self.primary = deque()
        self.secondary = deque([start])
        self.queued = {start}
        self.explored = []
        self.explored_set = set()
        self.values = {}
        self.cluster = []
        self.subtrees = {}
        self.bad_vertices = []
        self.distance = DistanceToSet(graph, s)

    def explore(self, v, value):
        self.queued.discard(v)
        self.explored.append(v)
        self.explored_set.add(v)
        self.values[v] = value
        self.distance.add(v)

    def enqueue_neighbours(self, v):
        added = []
        for u in sorted(set(self.graph.adjacency[v])):
            if u not in self.explored_set and u not in self.queued:
                self.primary.append(u)
                self.queued.add(u)
                added.append(u)
        return added

    def check(self, final=False):
        n_cluster = len(self.cluster)
        neighbourhood = {self.start} | set(self.cluster) | {u for v in self.cluster for u in self.graph.adjacency[v]}
        if not self.explored_set <= neighbourhood:
            raise CheckFailed("explored set escaped B(C, 1) and the start vertex")
        if n_cluster > self.cap + 1:
            raise CheckFailed("cluster exceeds the cap")
        members = [v for tree in self.subtrees.values() for v in tree]
        if sorted(members) != sorted(self.cluster) or len(set(members)) != len(members):
            raise CheckFailed("subtrees do not partition the cluster")
        pq, sq = set(self.primary), set(self.secondary)
        if pq & sq or pq & self.explored_set or sq & self.explored_set:
            raise CheckFailed("a vertex sits in two of the queues and the explored set")
        if final and len(self.explored) > self.graph.d * (self.cap + 1):
            raise CheckFailed("explored set exceeds d (K ln N + 1)")


class ExplorationTrace(BaseModel):
    model_config = ConfigDict(frozen=True)

    start: int
    level: float
    cap: float
    anomaly_threshold: float
    goodness_radius: int
    explored: list[int]
    values: list[float]
    cluster: list[int]
    bad_vertices: list[int]
    subtrees: list[list[int]]
    k_end: int
    stop_reason: str
    sup_abs: float
    anomalous: bool
    events: list[dict] = []

    @property
    def cluster_size(self):
        return len(self.cluster)

    def value_of(self, v):
        return self.values[self.explored.index(v)]


def explore_component(graph, green, x, h, K=DEFAULT_K, c_kappa=DEFAULT_C_KAPPA, seed=None, s=None,
                      debug=False, record_events=True):
    n = graph.n_vertices
    cap = K * math.log(n)
    anomaly_threshold = c_kappa * math.sqrt(math.log(n))
    s = goodness_radius(n, graph.d) if s is None else s
    rng = np.random.default_rng(seed)
    conditioner = IncrementalConditioner(green)
    state = ExplorationState(graph, x, cap, s)
    events = []

    def log_event(action, vertex, value=None):
        if record_events:
            events.append({'step': len(events), 'action': action, 'vertex': int(vertex),
                           'value': value, 'pq': len(state.primary), 'sq': len(state.secondary)})

    def generate(v, tree):
        value, _, _ = conditioner.generate(v, rng)
        state.explore(v, value)
        log_event('generate', v, value)
        if value < h:
            return False
        tree.append(v)
        state.cluster.append(v)
        return True

    stop_reason = STOP_EMPTY
    while state.secondary and stop_reason == STOP_EMPTY:
        y = state.secondary.popleft()
        state.bad_vertices.append(y)
        tree = state.subtrees.setdefault(y, [])
        log_event('take-secondary', y)
        if generate(y, tree):
            if len(state.cluster) >= cap:
                stop_reason = STOP_CAP
                break
            for u in state.enqueue_neighbours(y):
                log_event('enqueue', u)
            while state.primary:
                z = state.primary.popleft()
                verdict = _verdict(graph, state.explored_set, state.distance, z, full=False)
                if not verdict.is_good:
                    state.secondary.append(z)
                    log_event('defer', z)
                    continue
                if generate(z, tree):
                    if len(state.cluster) >= cap:
                        stop_reason = STOP_CAP
                        break
                    for u in state.enqueue_neighbours(z):
                        log_event('enqueue', u)
                if debug:
                    state.check()
        if debug:
            state.check()
    if debug:
        state.check(final=True)
    log_event('stop-' + stop_reason, x)
    values = [state.values[v] for v in state.explored]
    sup_abs = max((abs(v) for v in values), default=0.0)
    return ExplorationTrace(
        start=x, level=h, cap=cap, anomaly_threshold=anomaly_threshold, goodness_radius=s,
        explored=state.explored, values=values, cluster=state.cluster, bad_vertices=state.bad_vertices,
        subtrees=[state.subtrees[y] for y in state.bad_vertices], k_end=len(state.bad_vertices),
        stop_reason=stop_reason, sup_abs=sup_abs, anomalous=sup_abs >= anomaly_threshold, events=events)


def bad_vertex_bound(K, s, c1=DEFAULT_C1):
    """k_max = c1 K s^2."""
    return c1 * K * s ** 2


def wilson_interval(successes, trials, confidence=0.95):
    if trials == 0:
        return 0.0, 1.0
    z = scipy.stats.norm.ppf(0.5 + confidence / 2)
    p = successes / trials
    denom = 1 + z ** 2 / trials
    centre = (p + z ** 2 / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z ** 2 / (4 * trials ** 2)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


class DominationReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    h: float
    epsilon: float
    depth: int
    replicas: int
    kept_traces: int
    anomalous_traces: int
    comparisons: int
    dominated: int
    frequency: float
    wilson_low: float
    wilson_high: float
    trace_frequency: float
    max_k_end: int
    k_max: float
    k_end_violations: int


def _domination_replica(graph, green, x, h, epsilon, depth, K, c_kappa, s, seed):
    child_trace, child_tree = seed.spawn(2)
    trace = explore_component(graph, green, x, h, K=K, c_kappa=c_kappa, seed=child_trace, s=s,
                              record_events=False)
    rng = np.random.default_rng(child_tree)
    outcomes = []
    for y, tree in zip(trace.bad_vertices, trace.subtrees):
        z = simulate_cluster_levels(graph.d, h - epsilon, depth, rng, root_value=trace.value_of(y), forward=False)
        outcomes.append(len(tree) <= z.size)
    return trace.anomalous, trace.k_end, outcomes


def subtree_domination_experiment(graph, green, x, h, epsilon, depth, replicas, seed, K=DEFAULT_K,
                                  c_kappa=DEFAULT_C_KAPPA, s=None, c1=DEFAULT_C1, threads=None, progress=False):
    """
    For every subtree T^{y_i} of every trace, compare its size with the full
    tree cluster at level h - epsilon of a tree GFF pinned at psi(y_i).
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    s = goodness_radius(graph.n_vertices, graph.d) if s is None else s
    tasks = [(graph, green, x, h, epsilon, depth, K, c_kappa, s, child) for child in spawn_seeds(seed, replicas)]
    results = run_tasks(_domination_replica, tasks, threads=threads, desc='domination', progress=progress)
    kept = [(k_end, outcomes) for anomalous, k_end, outcomes in results if not anomalous]
    comparisons = sum(len(outcomes) for _, outcomes in kept)
    dominated = sum(sum(outcomes) for _, outcomes in kept)
    low, high = wilson_interval(dominated, comparisons)
    k_max = bad_vertex_bound(K, s, c1)
    k_ends = [k_end for _, k_end, _ in results]
    report = DominationReport(
        h=h, epsilon=epsilon, depth=depth, replicas=replicas, kept_traces=len(kept),
        anomalous_traces=replicas - len(kept), comparisons=comparisons, dominated=dominated,
        frequency=dominated / comparisons if comparisons else 1.0, wilson_low=low, wilson_high=high,
        trace_frequency=sum(all(outcomes) for _, outcomes in kept) / len(kept) if kept else 1.0,
        max_k_end=max(k_ends, default=0), k_max=k_max, k_end_violations=sum(k > k_max for k in k_ends))
    logger.info('domination frequency %.4f [%.4f, %.4f] over %d comparisons', report.frequency, low, high,
                comparisons)
    return report
