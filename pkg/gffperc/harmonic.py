"""
Exact random-walk solves shared by the graph and the tree side.

Everything here works on any "chain": an object exposing `n_vertices` and a
sparse row-stochastic (or substochastic at truncation leaves) `transition_matrix()`.
"""
import logging
from functools import cached_property

import numpy as np
import scipy.sparse
import scipy.sparse.linalg

logger = logging.getLogger(__name__)


def _free_block(chain, free):
    P = chain.transition_matrix().tocsr()
    block = scipy.sparse.identity(len(free), format='csc') - P[free][:, free].tocsc()
    return P, scipy.sparse.linalg.splu(block.tocsc())


class HarmonicSolver:
    """
    Hitting quantities for the target set A: one sparse LU factorisation of
    I - P restricted to the complement of A, reused for every right-hand side.
    """

    def __init__(self, chain, targets):
        targets = sorted(set(int(a) for a in targets))
        if not targets:
            raise ValueError("target set A must be non-empty")
        n = chain.n_vertices
        self.n_vertices = n
        self.targets = np.asarray(targets, dtype=np.int64)
        mask = np.ones(n, dtype=bool)
        mask[self.targets] = False
        self.free = np.flatnonzero(mask)
        self.target_position = np.full(n, -1, dtype=np.int64)
        self.target_position[self.targets] = np.arange(len(self.targets))
        self._lu = None
        if len(self.free):
            P, self._lu = _free_block(chain, self.free)
            self._exit_block = P[self.free][:, self.targets].toarray()
        logger.debug('harmonic solver |A|=%d |free|=%d', len(self.targets), len(self.free))

    def in_targets(self, x):
        return self.target_position[x] >= 0

    @cached_property
    def hit_distribution_matrix(self):
        """Row x is the law of X_{H_A} under P_x, columns indexed like `targets`."""
        result = np.zeros((self.n_vertices, len(self.targets)))
        result[self.targets, np.arange(len(self.targets))] = 1.0
        if self._lu is not None:
            result[self.free] = self._lu.solve(self._exit_block)
        return result

    @cached_property
    def expected_hit_times(self):
        """E_x[H_A] for every x: solves (I - P)u = 1 off A, u = 0 on A."""
        result = np.zeros(self.n_vertices)
        if self._lu is not None:
            result[self.free] = self._lu.solve(np.ones(len(self.free)))
        return result

    def hit_distribution(self, x):
        return dict(zip(self.targets.tolist(), self.hit_distribution_matrix[x].tolist()))

    def expected_hit_time(self, x):
        return float(self.expected_hit_times[x])

    def stationary_hit_time(self):
        """E_pi[H_A] with pi uniform."""
        return float(self.expected_hit_times.mean())


def killed_green_matrix(chain, U):
    """(sorted U, g^U restricted to U x U) for the walk killed on exiting U."""
    U = sorted(set(int(u) for u in U))
    if not U:
        return np.asarray(U, dtype=np.int64), np.zeros((0, 0))
    if len(U) == chain.n_vertices:
        raise ValueError("U must be a proper subset of the vertex set")
    index = np.asarray(U, dtype=np.int64)
    _, lu = _free_block(chain, index)
    matrix = lu.solve(np.eye(len(index)))
    return index, (matrix + matrix.T) / 2


def killed_green(chain, U, x, y):
    index, matrix = killed_green_matrix(chain, U)
    position = {int(u): i for i, u in enumerate(index)}
    if x not in position or y not in position:
        return 0.0
    return float(matrix[position[x], position[y]])
