"""
Monte Carlo estimators on the d-regular tree: the forward percolation
probability, the growth rate of forward spheres, the critical level, the
exponential-moment fixed point and the sphere-growth check.

Every estimator draws replica i from child i of SeedSequence(seed), so runs
at different depths or levels share their random input replica by replica.
"""
import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import scipy.special
from pydantic import BaseModel, ConfigDict, Field, model_validator

from utils import BOOTSTRAP_RESAMPLES, ESTIMATOR_FRONTIER, LOG_OVERFLOW_GUARD, REPLICA_CHUNK

from .errors import BracketError, CheckFailed
from .parallel import run_tasks, spawn_seeds
from .tree import simulate_cluster_levels

logger = logging.getLogger(__name__)

EMPTY_CLUSTERS = 'empty-clusters'
TOO_FEW_LEVELS = 'too-few-positive-levels'
ZEROS_EXCLUDED = 'zero-counts-excluded'
SATURATED = 'frontier-subsampled'
NOT_SUPERCRITICAL = 'not-supercritical'


class EstimateReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    quantity: str
    estimate: float
    standard_error: float = Field(ge=0)
    replicas: int = Field(ge=1)
    censored: int = Field(ge=0)
    seed: int
    config: Dict[str, Any]
    interval: Optional[Tuple[float, float]] = None
    flags: List[str] = []
    details: Dict[str, Any] = {}

    @model_validator(mode='after')
    def _censored_within_replicas(self):
        if self.censored > self.replicas:
            raise ValueError("censored count cannot exceed the number of replicas")
        return self


@dataclass(frozen=True, eq=False)
class ClusterSample:
    """Per-replica sphere counts |C ∩ S(o,k)|, k = 0..depth, one row per replica."""
    counts: np.ndarray
    saturated: int

    @property
    def replicas(self):
        return self.counts.shape[0]

    @property
    def survived(self):
        return self.counts[:, -1] > 0

    @property
    def sizes(self):
        return self.counts.sum(axis=1)


def _check_tree_args(d, depth, replicas):
    if d < 3:
        raise ValueError("d must be at least 3")
    if depth < 1:
        raise ValueError("depth must be at least 1")
    if replicas < 1:
        raise ValueError("replicas must be at least 1")


def _cluster_block(d, h, depth, seeds, root_value, forward, max_frontier):
    rows = np.zeros((len(seeds), depth + 1))
    saturated = 0
    for i, seed in enumerate(seeds):
        levels = simulate_cluster_levels(d, h, depth, np.random.default_rng(seed), root_value=root_value,
                                         forward=forward, max_frontier=max_frontier)
        rows[i] = levels.counts
        saturated += levels.saturated
    return rows, saturated


def cluster_counts(d, h, depth, replicas, seed, root_value=None, forward=True, max_frontier=ESTIMATOR_FRONTIER,
                   threads=None, progress=False):
    """Sphere counts of `replicas` independent root clusters at level h."""
    _check_tree_args(d, depth, replicas)
    seeds = spawn_seeds(seed, replicas)
    tasks = [(d, h, depth, seeds[i:i + REPLICA_CHUNK], root_value, forward, max_frontier)
             for i in range(0, replicas, REPLICA_CHUNK)]
    results = run_tasks(_cluster_block, tasks, threads=threads, desc=f'clusters h={h:g}', progress=progress)
    return ClusterSample(counts=np.vstack([rows for rows, _ in results]),
                         saturated=int(sum(saturated for _, saturated in results)))


def _bootstrap_rng(seed):
    # separate stream from the replica seeds
    return np.random.default_rng([seed, 1])


def _bootstrap_weights(rng, replicas, resamples):
    """Multinomial resampling weights, one row per bootstrap resample."""
    return rng.multinomial(replicas, np.full(replicas, 1.0 / replicas), size=resamples) / replicas


def bernoulli_standard_error(p, n):
    return math.sqrt(max(p * (1 - p), 0.0) / n)


def estimate_eta_plus(d, h, depth, replicas, seed, max_frontier=ESTIMATOR_FRONTIER, threads=None, progress=False):
    """Fraction of forward clusters at level h that still meet the sphere at `depth`."""
    sample = cluster_counts(d, h, depth, replicas, seed, forward=True, max_frontier=max_frontier,
                            threads=threads, progress=progress)
    survived = int(sample.survived.sum())
    estimate = survived / replicas
    flags = [SATURATED] if sample.saturated else []
    logger.info('eta+(h=%g, depth=%d) = %.4f (%d/%d)', h, depth, estimate, survived, replicas)
    return EstimateReport(quantity='eta_plus', estimate=estimate,
                          standard_error=bernoulli_standard_error(estimate, replicas), replicas=replicas,
                          censored=survived, seed=seed, config={'d': d, 'h': h, 'depth': depth}, flags=flags)


def growth_window(depth):
    return np.arange(math.ceil(depth / 2), depth + 1)


def growth_fit(mean_counts, depth):
    """
    Least-squares fit of log E|C ∩ S+(o,k)| against k over the window
    [depth/2, depth]. Returns (rate, rms residual, flags); zero means are
    left out of the fit.
    """
    window = growth_window(depth)
    values = np.asarray(mean_counts)[window]
    positive = values > 0
    if not positive.any():
        return 0.0, 0.0, [EMPTY_CLUSTERS]
    if positive.sum() < 2:
        return 0.0, 0.0, [TOO_FEW_LEVELS]
    flags = [] if positive.all() else [ZEROS_EXCLUDED]
    ks, logs = window[positive], np.log(values[positive])
    slope, intercept = np.polyfit(ks, logs, 1)
    residual = float(np.sqrt(np.mean((logs - (intercept + slope * ks)) ** 2)))
    return float(np.exp(slope)), residual, flags


def _bootstrap_rates(counts, depth, weights):
    means = weights @ counts
    return np.array([growth_fit(row, depth)[0] for row in means])


def _lambda_report(sample, d, h, depth, seed, resamples):
    replicas = sample.replicas
    rate, residual, flags = growth_fit(sample.counts.mean(axis=0), depth)
    if sample.saturated:
        flags = flags + [SATURATED]
    if rate > 0:
        weights = _bootstrap_weights(_bootstrap_rng(seed), replicas, resamples)
        error = float(np.std(_bootstrap_rates(sample.counts, depth, weights)))
    else:
        error = 0.0
    logger.info('lambda(h=%g, depth=%d) = %.4f +- %.4f', h, depth, rate, error)
    return EstimateReport(quantity='lambda', estimate=rate, standard_error=error, replicas=replicas,
                          censored=int(sample.survived.sum()), seed=seed,
                          config={'d': d, 'h': h, 'depth': depth}, flags=flags,
                          details={'fit_residual': residual, 'window': [int(k) for k in growth_window(depth)],
                                   'mean_counts': sample.counts.mean(axis=0).tolist()})


def estimate_lambda(d, h, depth, replicas, seed, resamples=BOOTSTRAP_RESAMPLES, max_frontier=ESTIMATOR_FRONTIER,
                    threads=None, progress=False):
    if depth < 5:
        raise ValueError("the growth-rate fit needs depth >= 5")
    sample = cluster_counts(d, h, depth, replicas, seed, forward=True, max_frontier=max_frontier,
                            threads=threads, progress=progress)
    return _lambda_report(sample, d, h, depth, seed, resamples)


def _crossing(levels, rates):
    """First level where the rate curve passes from >= 1 to < 1, linearly interpolated; nan if none."""
    for j in range(len(levels) - 1):
        if rates[j] >= 1 > rates[j + 1]:
            span = rates[j] - rates[j + 1]
            return levels[j] + (levels[j + 1] - levels[j]) * (rates[j] - 1) / span
    return math.nan


def estimate_h_star(d, h_grid, depth, replicas, seed, tolerance=1e-3, max_steps=30, resamples=BOOTSTRAP_RESAMPLES,
                    confidence=0.95, max_frontier=ESTIMATOR_FRONTIER, threads=None, progress=False):
    """
    Bisection of the Monte Carlo curve h -> lambda_h on lambda_h = 1. All levels
    share the replica seeds; the bootstrap interval resamples replicas jointly
    across every evaluated level.
    """
    if depth < 5:
        raise ValueError("the growth-rate fit needs depth >= 5")
    grid = sorted(float(h) for h in h_grid)
    if len(grid) < 2:
        raise ValueError("the h grid needs at least two levels")
    samples = {}

    def rate(h):
        if h not in samples:
            samples[h] = cluster_counts(d, h, depth, replicas, seed, forward=True, max_frontier=max_frontier,
                                        threads=threads, progress=progress)
        return growth_fit(samples[h].counts.mean(axis=0), depth)[0]

    rates = [rate(h) for h in grid]
    if not rates[0] > 1:
        raise BracketError(f"lambda({grid[0]:g}) = {rates[0]:.4f} <= 1: extend the h grid to lower levels")
    if not rates[-1] < 1:
        raise BracketError(f"lambda({grid[-1]:g}) = {rates[-1]:.4f} >= 1: extend the h grid to higher levels")
    j = next(j for j in range(len(grid) - 1) if rates[j] >= 1 > rates[j + 1])
    low, high = grid[j], grid[j + 1]
    steps = 0
    while high - low > tolerance and steps < max_steps:
        middle = (low + high) / 2
        if rate(middle) >= 1:
            low = middle
        else:
            high = middle
        steps += 1
        logger.debug('bisection step %d: [%.5f, %.5f]', steps, low, high)
    h_star = (low + high) / 2

    levels = sorted(samples)
    counts = [samples[h].counts for h in levels]
    weights = _bootstrap_weights(_bootstrap_rng(seed), replicas, resamples)
    boot = np.array([_crossing(levels, [growth_fit(w @ c, depth)[0] for c in counts]) for w in weights])
    finite = boot[np.isfinite(boot)]
    flags = [] if len(finite) == len(boot) else ['bootstrap-crossing-missing']
    tail = (1 - confidence) / 2 * 100
    interval = (float(np.percentile(finite, tail)), float(np.percentile(finite, 100 - tail))) if len(finite) \
        else (low, high)
    error = float(np.std(finite)) if len(finite) else 0.0
    if not 0 < h_star < math.inf:
        raise CheckFailed(f"critical level estimate {h_star:.4f} is not in (0, inf)")
    logger.info('h* = %.4f, interval [%.4f, %.4f], %d bisection steps', h_star, interval[0], interval[1], steps)
    return EstimateReport(quantity='h_star', estimate=h_star, standard_error=error, replicas=replicas,
                          censored=int(samples[levels[-1]].survived.sum()), seed=seed,
                          config={'d': d, 'h_grid': grid, 'depth': depth}, interval=interval, flags=flags,
                          details={'bracket': [low, high], 'steps': steps, 'levels': levels,
                                   'rates': [growth_fit(samples[h].counts.mean(axis=0), depth)[0] for h in levels]})


def estimate_curve(estimator, d, h_grid, depth, replicas, seed, **kwargs):
    """One report per level of the grid, every level on the same replica seeds."""
    return [estimator(d, h, depth, replicas, seed, **kwargs) for h in sorted(h_grid)]


def count_inversions(reports, tolerance=2.0):
    """Adjacent increases of a curve that is expected to be non-increasing, beyond `tolerance` joint SEs."""
    inversions = 0
    for first, second in zip(reports, reports[1:]):
        spread = math.hypot(first.standard_error, second.standard_error)
        if second.estimate - first.estimate > tolerance * spread:
            inversions += 1
    return inversions


class SphereGrowthRow(BaseModel):
    model_config = ConfigDict(frozen=True)

    k: int
    threshold: float
    frequency: float
    standard_error: float
    consistent: bool


class SphereGrowthReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    d: int
    h: float
    depth: int
    replicas: int
    seed: int
    lambda_h: float
    eta_plus: float
    eta_standard_error: float
    rows: List[SphereGrowthRow]
    flags: List[str] = []

    @property
    def all_consistent(self):
        return all(row.consistent for row in self.rows)


def sphere_growth_check(d, h, depth, replicas, seed, lambda_h=None, max_frontier=ESTIMATOR_FRONTIER,
                        threads=None, progress=False):
    """
    P[|C ∩ S+(o,k)| >= lambda_h^k / k^2] over the growth window, each compared
    with the depth-limited forward percolation probability within 3 joint SEs.
    """
    if depth < 5:
        raise ValueError("the growth window needs depth >= 5")
    sample = cluster_counts(d, h, depth, replicas, seed, forward=True, max_frontier=max_frontier,
                            threads=threads, progress=progress)
    if lambda_h is None:
        lambda_h = growth_fit(sample.counts.mean(axis=0), depth)[0]
    flags = [] if lambda_h > 1 else [NOT_SUPERCRITICAL]
    eta = float(sample.survived.mean())
    eta_error = bernoulli_standard_error(eta, replicas)
    rows = []
    for k in growth_window(depth):
        threshold = lambda_h ** k / k ** 2
        frequency = float(np.mean(sample.counts[:, k] >= threshold))
        error = bernoulli_standard_error(frequency, replicas)
        consistent = abs(frequency - eta) <= 3 * math.hypot(error, eta_error)
        rows.append(SphereGrowthRow(k=int(k), threshold=threshold, frequency=frequency, standard_error=error,
                                    consistent=consistent))
    return SphereGrowthReport(d=d, h=h, depth=depth, replicas=replicas, seed=seed, lambda_h=lambda_h, eta_plus=eta,
                              eta_standard_error=eta_error, rows=rows, flags=flags)


class FixedPointRow(BaseModel):
    model_config = ConfigDict(frozen=True)

    delta: float
    a_grid: List[float]
    log_g: List[float]
    rhs: List[float]
    residuals: List[float]
    residual_se: List[float]
    diverged: bool
    accepted: bool


class FixedPointReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    d: int
    h: float
    depth: int
    replicas: int
    outer: int
    inner: int
    seed: int
    rows: List[FixedPointRow]
    best_delta: Optional[float] = None


def log_mean_exp(x):
    return float(scipy.special.logsumexp(x) - math.log(len(x)))


def _scaled_mean_and_error(x):
    """Mean of exp(x - max x) and its standard error."""
    top = float(np.max(x))
    terms = np.exp(x - top)
    return top, float(terms.mean()), float(terms.std() / math.sqrt(len(x)))


def _inner_sizes(d, h, depth, root_value, seed, inner, max_frontier):
    if root_value < h:
        return np.zeros(inner)
    rng = np.random.default_rng(seed)
    return np.array([simulate_cluster_levels(d, h, depth, rng, root_value=root_value,
                                             max_frontier=max_frontier).size for _ in range(inner)])


def _fixed_point_samples(d, h, a, depth, replicas, outer, inner, seed, max_frontier, threads, progress):
    """Forward cluster sizes from the pinned root a, and nested sizes one level shallower from its children."""
    direct_seed, child_seed, *inner_seeds = spawn_seeds(seed, outer + 2)
    direct = cluster_counts(d, h, depth, replicas, direct_seed, root_value=a, max_frontier=max_frontier,
                            threads=threads).sizes
    children = a / (d - 1) + math.sqrt(d / (d - 1)) * np.random.default_rng(child_seed).standard_normal(outer)
    tasks = [(d, h, depth - 1, float(b), s, inner, max_frontier) for b, s in zip(children, inner_seeds)]
    nested = np.vstack(run_tasks(_inner_sizes, tasks, threads=threads, desc=f'nested a={a:g}', progress=progress))
    return direct, nested


def _fixed_point_row(d, delta, a_grid, samples, guard):
    log_factor = math.log1p(delta)
    log_g, rhs, residuals, errors = [], [], [], []
    diverged = False
    for direct, nested in samples:
        x = direct * log_factor
        log_lhs = log_mean_exp(x)
        log_children = np.array([log_mean_exp(row * log_factor) for row in nested])
        if log_lhs > guard or log_children.max() > guard or (d - 1) * np.log(np.mean(np.exp(log_children))) > guard:
            diverged = True
            break
        _, mantissa, mantissa_error = _scaled_mean_and_error(x)
        lhs = math.exp(log_lhs)
        lhs_error = lhs * mantissa_error / mantissa
        children = np.exp(log_children)
        m = float(children.mean())
        m_error = float(children.std() / math.sqrt(len(children)))
        right = (1 + delta) * m ** (d - 1)
        right_error = (1 + delta) * (d - 1) * m ** (d - 2) * m_error
        log_g.append(log_lhs)
        rhs.append(right)
        residuals.append(abs(lhs - right))
        errors.append(math.hypot(lhs_error, right_error))
    accepted = not diverged and all(r <= 5 * e + 1e-12 * max(1.0, v) for r, e, v in zip(residuals, errors, rhs))
    return FixedPointRow(delta=delta, a_grid=list(a_grid), log_g=log_g, rhs=rhs, residuals=residuals,
                         residual_se=errors, diverged=diverged, accepted=accepted)


def check_exp_moment_fixed_point(d, h, deltas, depth, replicas, seed, a_grid=None, outer=64, inner=None,
                                 h_star=None, guard=LOG_OVERFLOW_GUARD, max_frontier=ESTIMATOR_FRONTIER,
                                 threads=None, progress=False):
    """
    For every delta, estimates g(a) = E_a[(1+delta)^|C ∩ T+|] on the tree truncated at `depth`
    and its residual against (1+delta) E[g(a/(d-1) + Y)]^(d-1), Y ~ N(0, d/(d-1)), where the
    inner expectation is a nested estimate one level shallower. The same cluster samples serve
    every delta.
    """
    _check_tree_args(d, depth, replicas)
    if depth < 2:
        raise ValueError("the nested estimate needs depth >= 2")
    if h_star is not None and h <= h_star:
        raise ValueError(f"h = {h:g} must exceed the critical level estimate {h_star:g}")
    if any(delta < 0 for delta in deltas):
        raise ValueError("delta must be non-negative")
    a_grid = [h, h + 0.5, h + 1.0, h + 2.0] if a_grid is None else sorted(float(a) for a in a_grid)
    if a_grid[0] < h:
        raise ValueError("the a grid must lie in [h, inf)")
    inner = inner or max(replicas // 10, 50)
    samples = [_fixed_point_samples(d, h, a, depth, replicas, outer, inner, a_seed, max_frontier, threads, progress)
               for a, a_seed in zip(a_grid, spawn_seeds(seed, len(a_grid)))]
    rows = [_fixed_point_row(d, float(delta), a_grid, samples, guard) for delta in sorted(deltas)]
    accepted = [row.delta for row in rows if row.accepted]
    for row in rows:
        logger.info('delta=%g diverged=%s accepted=%s max residual=%s', row.delta, row.diverged, row.accepted,
                    max(row.residuals) if row.residuals else None)
    return FixedPointReport(d=d, h=h, depth=depth, replicas=replicas, outer=outer, inner=inner, seed=seed, rows=rows,
                            best_delta=max(accepted) if accepted else None)
