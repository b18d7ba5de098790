"""
Zero-average Gaussian free field on a finite regular graph: the zero-average
Green function G (group inverse of I - P), exact samplers, conditional laws
and the bounds and identities used to validate them.
"""
import logging
import math
import threading
from dataclasses import dataclass

import numpy as np
import scipy.integrate
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg
from numpy.polynomial import Chebyshev

from utils import CG_TOL, CHEBYSHEV_TOL, DENSE_THRESHOLD, KERNEL_TOL

from .errors import AssumptionError
from .graph import spectral_gap
from .harmonic import HarmonicSolver, killed_green, killed_green_matrix

logger = logging.getLogger(__name__)

__all__ = [
    "GreenOperator",
    "GraphField",
    "IncrementalConditioner",
    "build_green",
    "sample_zagff",
    "sample_zagff_batch",
    "sample_sequential",
    "conditional_law",
    "schur_conditional_law",
    "killed_graph_green",
    "killed_green_matrix",
    "green_identity_residual",
    "green_upper_bound",
    "local_green_bound",
    "green_by_quadrature",
    "gamblers_ruin_hit_probability",
    "gamblers_ruin_exit_time",
    "sup_tail_frequency",
]


def _inverse_sqrt_chebyshev(lower, upper, tol):
    """Chebyshev interpolant of t^{-1/2} on [lower, upper] with max error <= tol * lower^{-1/2}."""
    grid = np.linspace(lower, upper, 4001)
    target = grid ** -0.5
    degree = 8
    while True:
        approx = Chebyshev.interpolate(lambda t: t ** -0.5, degree, domain=[lower, upper])
        error = np.max(np.abs(approx(grid) - target))
        if error <= tol * lower ** -0.5 or degree >= 4096:
            logger.debug('chebyshev degree %d, max error %.3e', degree, error)
            return approx
        degree *= 2


class GreenOperator:
    """
    G = sum over non-zero eigenvalues of I - P of lambda^{-1} v v^T.

    Dense graphs keep the eigendecomposition and the full matrix. Larger graphs
    apply G through conjugate-gradient solves on the mean-zero subspace and
    sample through a Chebyshev approximation of (I - P)^{-1/2}.
    """

    def __init__(self, graph, dense_threshold=DENSE_THRESHOLD):
        if not graph.is_connected:
            raise AssumptionError("the zero-average Green function needs a connected graph")
        self.graph = graph
        self.n_vertices = graph.n_vertices
        self.dense = self.n_vertices <= dense_threshold
        if self.dense:
            laplacian = np.eye(self.n_vertices) - graph.transition_matrix().toarray()
            eigenvalues, eigenvectors = scipy.linalg.eigh(laplacian)
            keep = eigenvalues > KERNEL_TOL * eigenvalues.max()
            if np.count_nonzero(~keep) != 1:
                raise AssumptionError("kernel of I - P is not one-dimensional")
            self.eigenvalues = eigenvalues[keep]
            self.eigenvectors = eigenvectors[:, keep]
            matrix = (self.eigenvectors / self.eigenvalues) @ self.eigenvectors.T
            self._matrix = (matrix + matrix.T) / 2
        else:
            self._laplacian = (scipy.sparse.identity(self.n_vertices, format='csr')
                               - graph.transition_matrix()).tocsr()
            self._columns = {}
            self._columns_lock = threading.Lock()
            gap = spectral_gap(graph, dense_threshold=dense_threshold)
            self._chebyshev = _inverse_sqrt_chebyshev(0.99 * gap, 2.0, CHEBYSHEV_TOL)
        logger.info('built green operator N=%d (%s)', self.n_vertices, 'dense' if self.dense else 'iterative')

    @property
    def matrix(self):
        if self.dense:
            return self._matrix
        return np.column_stack([self.column(x) for x in range(self.n_vertices)])

    def apply(self, f):
        f = np.asarray(f, dtype=float)
        if self.dense:
            return self._matrix @ f
        rhs = f - f.mean()
        u, info = scipy.sparse.linalg.cg(self._laplacian, rhs, rtol=CG_TOL, maxiter=20 * self.n_vertices)
        if info != 0:
            logger.warning('cg did not converge (info=%d)', info)
        return u - u.mean()

    def column(self, x):
        if self.dense:
            return self._matrix[:, x]
        column = self._columns.get(x)
        if column is None:
            e = np.zeros(self.n_vertices)
            e[x] = 1.0
            column = self.apply(e)
            # worker threads share the cache, the first stored solve wins
            with self._columns_lock:
                column = self._columns.setdefault(x, column)
        return column

    def entry(self, x, y):
        return float(self.column(y)[x])

    def submatrix(self, rows, cols=None):
        rows = np.asarray(rows, dtype=np.int64)
        cols = rows if cols is None else np.asarray(cols, dtype=np.int64)
        if self.dense:
            return self._matrix[np.ix_(rows, cols)]
        return np.column_stack([self.column(int(c))[rows] for c in cols]) if len(cols) else np.zeros((len(rows), 0))

    def _chebyshev_apply(self, v):
        lower, upper = self._chebyshev.domain
        scale, shift = 2.0 / (upper - lower), (upper + lower) / (upper - lower)

        def step(u):
            w = scale * (self._laplacian @ u) - shift * u
            return w - w.mean()

        coef = self._chebyshev.coef
        previous, current = v, step(v)
        result = coef[0] * previous + coef[1] * current
        for c in coef[2:]:
            previous, current = current, 2 * step(current) - previous
            result = result + c * current
        return result

    def sample(self, rng):
        if self.dense:
            xi = rng.standard_normal(len(self.eigenvalues))
            return self.eigenvectors @ (xi / np.sqrt(self.eigenvalues))
        xi = rng.standard_normal(self.n_vertices)
        values = self._chebyshev_apply(xi - xi.mean())
        return values - values.mean()

    def sample_batch(self, rng, replicas):
        if self.dense:
            xi = rng.standard_normal((replicas, len(self.eigenvalues)))
            return (xi / np.sqrt(self.eigenvalues)) @ self.eigenvectors.T
        return np.stack([self.sample(rng) for _ in range(replicas)])


def build_green(graph, dense_threshold=DENSE_THRESHOLD):
    return GreenOperator(graph, dense_threshold=dense_threshold)


@dataclass(frozen=True, eq=False)
class GraphField:
    graph: object
    values: np.ndarray
    zero_average: bool = True

    def __post_init__(self):
        if len(self.values) != self.graph.n_vertices:
            raise ValueError("field must have one value per vertex")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")
        scale = self.graph.n_vertices * max(1.0, float(np.max(np.abs(self.values))))
        if self.zero_average and abs(float(np.sum(self.values))) > 1e-9 * scale:
            raise ValueError("zero-average field must sum to zero")

    def sup_abs(self):
        return float(np.max(np.abs(self.values)))


def sample_zagff(green, seed):
    rng = np.random.default_rng(seed)
    return GraphField(graph=green.graph, values=green.sample(rng))


def sample_zagff_batch(green, replicas, seed):
    """(replicas, N) array of independent zero-average fields."""
    rng = np.random.default_rng(seed)
    return green.sample_batch(rng, replicas)


class IncrementalConditioner:
    """
    Law of Psi(u) given the values already generated on E, kept through a
    growing Cholesky factor of G[E]. Vertices whose conditional variance is
    numerically zero are recorded but do not extend the factor: their value is
    a linear function of the others.
    """

    def __init__(self, green):
        self.green = green
        self.conditioned = []
        self.values = {}
        self._chol = np.zeros((0, 0))
        self._white = np.zeros(0)

    def _projection(self, u):
        if not self.conditioned:
            return np.zeros(0)
        g_eu = self.green.submatrix(self.conditioned, [u])[:, 0]
        return scipy.linalg.solve_triangular(self._chol, g_eu, lower=True)

    def law(self, u):
        if u in self.values:
            return self.values[u], 0.0
        w = self._projection(u)
        variance = max(self.green.entry(u, u) - float(w @ w), 0.0)
        return float(w @ self._white), variance

    def add(self, u, value):
        if u in self.values:
            raise ValueError(f"vertex {u} is already conditioned on")
        w = self._projection(u)
        variance = self.green.entry(u, u) - float(w @ w)
        self.values[u] = float(value)
        if variance <= KERNEL_TOL * self.green.entry(u, u):
            return
        k = len(self.conditioned)
        chol = np.zeros((k + 1, k + 1))
        chol[:k, :k] = self._chol
        chol[k, :k] = w
        chol[k, k] = math.sqrt(variance)
        self._chol = chol
        self._white = np.append(self._white, (value - float(w @ self._white)) / chol[k, k])
        self.conditioned.append(u)

    def generate(self, u, rng):
        """Draw Psi(u) from its conditional law and condition on it."""
        mean, variance = self.law(u)
        value = mean + rng.standard_normal() * math.sqrt(variance)
        self.add(u, value)
        return value, mean, variance


def sample_sequential(green, order, seed):
    """Generate the field vertex by vertex along `order` from exact conditional laws."""
    rng = np.random.default_rng(seed)
    conditioner = IncrementalConditioner(green)
    values = np.zeros(green.n_vertices)
    for u in order:
        values[u], _, _ = conditioner.generate(int(u), rng)
    return values


def _observed_on(targets, observed):
    if isinstance(observed, dict):
        return np.asarray([observed[int(a)] for a in targets], dtype=float)
    values = np.asarray(observed, dtype=float)
    if values.shape[0] != len(targets):
        raise ValueError("observed values must be aligned with the sorted set A")
    return values


def conditional_law(green, A, observed, x, solver=None):
    """
    Mean and variance of Psi(x) given Psi on A, from hitting quantities:
    the walk's exit values corrected by the zero-average constraint.
    """
    targets = sorted(set(int(a) for a in A))
    if not targets:
        raise ValueError("conditioning set A must be non-empty")
    values = _observed_on(targets, observed)
    if solver is None:
        solver = HarmonicSolver(green.graph, targets)
    if solver.in_targets(x):
        return float(values[solver.target_position[x]]), 0.0
    ratio = solver.expected_hit_time(x) / solver.stationary_hit_time()
    hit = solver.hit_distribution_matrix
    mean = hit[x] @ values - ratio * float(hit.mean(axis=0) @ values)
    g_column = green.column(x)[solver.targets]
    variance = green.entry(x, x) - hit[x] @ g_column + ratio * float(hit.mean(axis=0) @ g_column)
    return float(mean), float(max(variance, 0.0))


def schur_conditional_law(green, A, observed, x):
    targets = sorted(set(int(a) for a in A))
    if not targets:
        raise ValueError("conditioning set A must be non-empty")
    values = _observed_on(targets, observed)
    if x in targets:
        return float(values[targets.index(x)]), 0.0
    factor = scipy.linalg.cho_factor(green.submatrix(targets))
    g_ax = green.submatrix(targets, [x])[:, 0]
    weights = scipy.linalg.cho_solve(factor, g_ax)
    return float(weights @ values), float(max(green.entry(x, x) - weights @ g_ax, 0.0))


def killed_graph_green(graph, U, x, y):
    return killed_green(graph, U, x, y)


def green_identity_residual(green, U):
    """
    Max over x, y of |G(x,y) - g^U(x,y) - E_x[G(X_{T_U}, y)] + E_x[T_U]/N| for a
    proper subset U.
    """
    n = green.n_vertices
    U = sorted(set(U))
    outside = sorted(set(range(n)) - set(U))
    if not outside:
        raise ValueError("U must be a proper subset of the vertex set")
    killed = np.zeros((n, n))
    index, matrix = killed_green_matrix(green.graph, U)
    if len(index):
        killed[np.ix_(index, index)] = matrix
    solver = HarmonicSolver(green.graph, outside)
    G = green.matrix
    exit_part = solver.hit_distribution_matrix @ G[solver.targets]
    reconstructed = killed + exit_part - solver.expected_hit_times[:, None] / n
    return float(np.max(np.abs(G - reconstructed)))


def local_green_bound(d, dist):
    """3 (d-1)/(d-2) (1/(d-1))^dist, valid at distances up to (c0/3) log_{d-1} N."""
    return 3 * (d - 1) / (d - 2) * (1 / (d - 1)) ** dist


def green_upper_bound(d, dist, n, c0, beta):
    """Bound on G(x,y) valid for every pair, including the N-dependent correction terms."""
    return (16 / 7 * (d - 1) / (d - 2) * (1 / (d - 1)) ** dist
            + 2 * math.log(n) * n ** (-c0 / beta)
            + 1 / (beta * n ** c0))


def green_by_quadrature(graph, epsabs=1e-12):
    """G as the time integral of the continuous-time heat kernel minus 1/N (small graphs only)."""
    n = graph.n_vertices
    laplacian = np.eye(n) - graph.transition_matrix().toarray()

    def integrand(t):
        return scipy.linalg.expm(-t * laplacian) - 1.0 / n

    result, _ = scipy.integrate.quad_vec(integrand, 0, np.inf, epsabs=epsabs)
    return result


def gamblers_ruin_hit_probability(d, s):
    """P_x[H_A = T_{F_A}] at a good vertex: the walk returns to A before reaching distance s+1."""
    rho = 1 / (d - 1)
    return 1 - ((d - 2) / (d - 1)) / (1 - rho ** (s + 1))


def gamblers_ruin_exit_time(d, s):
    """E_x[T_{F_A}] at a good vertex."""
    rho = 1 / (d - 1)
    return d / (d - 2) * ((s + 1) * (d - 2) / (d - 1) / (1 - rho ** (s + 1)) - 1)


def sup_tail_frequency(green, c, replicas, seed, chunk=1000):
    """Empirical frequency of sup |Psi| >= c sqrt(ln N)."""
    rng = np.random.default_rng(seed)
    threshold = c * math.sqrt(math.log(green.n_vertices))
    hits, done = 0, 0
    while done < replicas:
        size = min(chunk, replicas - done)
        batch = green.sample_batch(rng, size)
        hits += int(np.count_nonzero(np.max(np.abs(batch), axis=1) >= threshold))
        done += size
    return hits / replicas
