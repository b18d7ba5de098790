"""
Ladder experiments for the two regimes: the largest level-set component stays
logarithmic above the critical level, and a positive fraction of vertices sit
in mesoscopic clusters below it.
"""
import logging
import math
from typing import Dict, List

import numpy as np
from pydantic import BaseModel, ConfigDict
from tenacity import RetryError, Retrying, retry_if_exception_type, stop_after_attempt

from .errors import AssumptionError
from .estimators import estimate_eta_plus, estimate_lambda
from .graph import ScaleConstants, audit_assumptions, generate_random_regular
from .parallel import run_tasks, spawn_seeds
from .percolation import CensusGeometry, level_components, mesoscopic_census
from .zagff import GraphField, build_green, sample_zagff_batch

logger = logging.getLogger(__name__)


def audited_graph(config, n, seed):
    """
    Random d-regular graph on n vertices that passes the assumption audit;
    each rejected draw moves to the next child seed.
    """
    seeds = iter(spawn_seeds(seed, config.graph_attempts))
    try:
        for attempt in Retrying(stop=stop_after_attempt(config.graph_attempts),
                                retry=retry_if_exception_type(AssumptionError)):
            with attempt:
                graph = generate_random_regular(config.d, n, next(seeds))
                report = audit_assumptions(graph, config.alpha, config.beta)
                if not report.all_pass:
                    logger.warning('graph N=%d rejected by the audit: %s', n, report.passes)
                    raise AssumptionError(f"graph with N={n} fails the audit {report.passes}")
    except RetryError as e:
        raise AssumptionError(f"no audited graph with N={n} in {config.graph_attempts} draws") from e
    return graph, report, attempt.retry_state.attempt_number - 1


class RungReport(BaseModel):
    """One ladder rung: statistics over every (graph, field) replica at size n."""
    model_config = ConfigDict(frozen=True)

    n: int
    log_n: float
    samples: int
    rejected_graphs: int
    spectral_gaps: List[float]
    statistics: Dict[str, float]


class ExperimentReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    experiment: str
    h: float
    d: int
    seed: int
    constants: Dict[str, float]
    rungs: List[RungReport]
    fit: Dict[str, float]
    checks: Dict[str, bool]

    @property
    def passed(self):
        return all(self.checks.values())


def _mean_and_error(values):
    values = np.asarray(values, dtype=float)
    if len(values) < 2:
        return float(values.mean()), 0.0
    return float(values.mean()), float(values.std(ddof=1) / math.sqrt(len(values)))


def _non_increasing(means, errors, tolerance=2.0):
    return all(b - a <= tolerance * math.hypot(ea, eb) for a, b, ea, eb in zip(means, means[1:], errors, errors[1:]))


def _subcritical_graph(config, n, seed):
    graph_seed, field_seed = spawn_seeds(seed, 2)
    graph, report, rejected = audited_graph(config, n, graph_seed)
    green = build_green(graph)
    sizes = [level_components(values, config.h, graph=graph).max_size
             for values in sample_zagff_batch(green, config.replicas, field_seed)]
    return sizes, report.spectral_gap, rejected


def run_subcritical_experiment(config, threads=None, progress=False):
    """
    Largest component of the level set above h across the ladder. Checks that
    P[max >= K ln N] does not grow with N and that max / ln N shows no upward
    trend beyond noise.
    """
    if config.h_star is not None and config.h <= config.h_star:
        raise ValueError(f"h = {config.h:g} is not above the critical level estimate {config.h_star:g}")
    rung_seeds = spawn_seeds(config.seed, len(config.ladder))
    tasks = [(config, n, graph_seed) for n, rung_seed in zip(config.ladder, rung_seeds)
             for graph_seed in spawn_seeds(rung_seed, config.graphs)]
    results = run_tasks(_subcritical_graph, tasks, threads=threads, desc='subcritical', progress=progress)
    rungs = []
    for i, n in enumerate(config.ladder):
        block = results[i * config.graphs:(i + 1) * config.graphs]
        sizes = np.concatenate([np.asarray(sizes, dtype=float) for sizes, _, _ in block])
        log_n = math.log(n)
        ratio, ratio_error = _mean_and_error(sizes / log_n)
        exceed = float(np.mean(sizes >= config.K * log_n))
        rungs.append(RungReport(n=n, log_n=log_n, samples=len(sizes), rejected_graphs=sum(r for _, _, r in block),
                                spectral_gaps=[gap for _, gap, _ in block],
                                statistics={'max_size_mean': float(sizes.mean()), 'max_size_max': float(sizes.max()),
                                            'ratio_mean': ratio, 'ratio_se': ratio_error,
                                            'exceed_frequency': exceed,
                                            'exceed_se': math.sqrt(exceed * (1 - exceed) / len(sizes))}))
        logger.info('N=%d max/lnN=%.3f +- %.3f P[max >= K lnN]=%.3f', n, ratio, ratio_error, exceed)
    log_ns = np.array([rung.log_n for rung in rungs])
    means = np.array([rung.statistics['max_size_mean'] for rung in rungs])
    slope, intercept = np.polyfit(log_ns, means, 1) if len(rungs) > 1 else (0.0, float(means[0]))
    ratio_slope = float(np.polyfit(log_ns, means / log_ns, 1)[0]) if len(rungs) > 1 else 0.0
    ratio_errors = [rung.statistics['ratio_se'] for rung in rungs]
    checks = {
        'exceed_frequency_non_increasing': _non_increasing([r.statistics['exceed_frequency'] for r in rungs],
                                                           [r.statistics['exceed_se'] for r in rungs]),
        'ratio_bounded': _non_increasing([r.statistics['ratio_mean'] for r in rungs], ratio_errors, tolerance=3.0),
    }
    constants = ScaleConstants(d=config.d, n=config.ladder[-1], alpha=config.alpha, beta=config.beta)
    return ExperimentReport(experiment='subcritical', h=config.h, d=config.d, seed=config.seed,
                            constants={key: float(value) for key, value in constants.as_dict().items()},
                            rungs=rungs, fit={'slope': float(slope), 'intercept': float(intercept),
                                              'ratio_slope': ratio_slope},
                            checks=checks)


def _supercritical_graph(config, n, gamma, seed):
    graph_seed, field_seed = spawn_seeds(seed, 2)
    graph, report, rejected = audited_graph(config, n, graph_seed)
    constants = ScaleConstants.from_report(report)
    geometry = CensusGeometry(graph, constants)
    green = build_green(graph)
    rows = []
    for values in sample_zagff_batch(green, config.replicas, field_seed):
        field = GraphField(graph, values)
        census = mesoscopic_census(field, config.h, constants, gamma, geometry=geometry)
        rows.append((census.component_count, census.sphere_count))
    return rows, report.spectral_gap, rejected, geometry.tree_like_fraction


def run_supercritical_experiment(config, threads=None, progress=False):
    """
    Fraction of vertices in clusters of size at least N^gamma across the
    ladder, with gamma from the growth rate at h + delta unless configured.
    Compared against the forward percolation probability at h.
    """
    if config.h_star is not None and config.h >= config.h_star:
        raise ValueError(f"h = {config.h:g} is not below the critical level estimate {config.h_star:g}")
    eta = estimate_eta_plus(config.d, config.h, config.depth, config.tree_replicas, config.seed, threads=threads)
    top = ScaleConstants(d=config.d, n=config.ladder[-1], alpha=config.alpha, beta=config.beta)
    gamma = config.gamma
    if gamma is None:
        rate = estimate_lambda(config.d, config.h + config.delta, config.depth, config.tree_replicas, config.seed,
                               threads=threads)
        gamma = top.gamma_h(rate.estimate) if rate.estimate > 1 else 0.0
        if gamma <= 0:
            raise ValueError(f"growth rate {rate.estimate:.4f} at h + delta is not above 1; lower h or set gamma")
    rung_seeds = spawn_seeds(config.seed, len(config.ladder))
    tasks = [(config, n, gamma, graph_seed) for n, rung_seed in zip(config.ladder, rung_seeds)
             for graph_seed in spawn_seeds(rung_seed, config.graphs)]
    results = run_tasks(_supercritical_graph, tasks, threads=threads, desc='supercritical', progress=progress)
    rungs = []
    for i, n in enumerate(config.ladder):
        block = results[i * config.graphs:(i + 1) * config.graphs]
        rows = np.array([row for rows, _, _, _ in block for row in rows], dtype=float)
        fractions, census = rows[:, 0] / n, rows[:, 1] / n
        fraction, fraction_error = _mean_and_error(fractions)
        census_mean, census_error = _mean_and_error(census)
        rungs.append(RungReport(n=n, log_n=math.log(n), samples=len(rows),
                                rejected_graphs=sum(r for _, _, r, _ in block),
                                spectral_gaps=[gap for _, gap, _, _ in block],
                                statistics={'fraction_mean': fraction, 'fraction_se': fraction_error,
                                            'half_eta_frequency': float(np.mean(fractions >= eta.estimate / 2)),
                                            'census_mean': census_mean, 'census_se': census_error,
                                            'census_variance': float(np.var(census)),
                                            'tree_like_fraction': float(np.mean([t for _, _, _, t in block]))}))
        logger.info('N=%d fraction=%.4f census=%.4f var=%.3g', n, fraction, census_mean, float(np.var(census)))
    last = rungs[-1].statistics
    variances = [rung.statistics['census_variance'] for rung in rungs]
    halves = [rung.statistics['half_eta_frequency'] for rung in rungs]
    checks = {
        'fraction_above_half_eta': last['fraction_mean'] >= eta.estimate / 2,
        'half_eta_frequency_non_decreasing': all(b >= a for a, b in zip(halves, halves[1:])),
        'census_variance_decreasing': all(b < a for a, b in zip(variances, variances[1:])),
        'census_mean_above_eta': last['census_mean'] >= eta.estimate - 2 * math.hypot(last['census_se'],
                                                                                      eta.standard_error),
    }
    return ExperimentReport(experiment='supercritical', h=config.h, d=config.d, seed=config.seed,
                            constants={**{key: float(value) for key, value in top.as_dict().items()},
                                       'gamma': float(gamma)},
                            rungs=rungs, fit={'eta_plus': eta.estimate, 'eta_plus_se': eta.standard_error},
                            checks=checks)
