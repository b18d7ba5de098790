import argparse
import io
import logging
import math
import os
import sys
import time
from dataclasses import dataclass
from typing import Optional

import networkx as nx
import numpy as np

from utils import (DEFAULT_ALPHA, DEFAULT_BETA, DEFAULT_C1, DEFAULT_C_KAPPA, DEFAULT_K, DEFAULT_REPLICAS,
                   EPSILON_GRID, EXIT_CHECK_FAILED, EXIT_ERROR, EXIT_OK, canonical_json, format_cell,
                   get_exact_output_path, read_field_csv, read_json, write_csv, write_json, write_jsonl)

from .config import ExperimentConfig, RunConfig, build_manifest, graph_provenance, load_experiment_config
from .coupling import boundary_variance_check, chart_killed_green_gap, couple_local, deviation_tail, good_vertex_gaps
from .errors import CheckFailed, GffPercError
from .estimators import (check_exp_moment_fixed_point, estimate_eta_plus, estimate_h_star, estimate_lambda,
                         sphere_growth_check)
from .experiments import run_subcritical_experiment, run_supercritical_experiment
from .exploration import explore_component, subtree_domination_experiment
from .graph import (RegularGraph, ScaleConstants, audit_assumptions, generate_random_regular, load_graph,
                    save_graph)
from .percolation import level_components, mesoscopic_census
from .parallel import spawn_seeds
from .tree import TreeBall, TreeField, forward_cluster, sample_tree_gff_batch, simulate_cluster_levels
from .zagff import (GraphField, build_green, green_identity_residual, local_green_bound, sample_zagff,
                    sample_zagff_batch, sup_tail_frequency)

logger = logging.getLogger(__name__)

# runtime options and the top-level RunConfig fields, kept out of RunConfig.params
NON_PARAM_KEYS = {'threads', 'output_path', 'format', 'quiet', 'log_level', 'handler', 'command', 'subcommand',
                'seed', 'd', 'alpha', 'beta', 'events', 'graph_out', 'trace_out', 'out_matrix'}

# alternative subcommand names, mapped to the name the handlers dispatch on
SUBCOMMAND_ALIASES = {('graph', 'gen'): 'generate', ('explore', 'run'): 'trace'}

NAMED_GRAPHS = {'k4': lambda: nx.complete_graph(4), 'petersen': nx.petersen_graph}


@dataclass
class CommandResult:
    data: dict
    header: Optional[list] = None
    rows: Optional[list] = None
    events: Optional[list] = None
    graph: Optional[dict] = None
    constants: Optional[dict] = None
    passed: bool = True
    message: str = ''


def run_config(args):
    params = {key: value for key, value in sorted(vars(args).items()) if key not in NON_PARAM_KEYS}
    return RunConfig(command=args.command, subcommand=args.subcommand, seed=args.seed, d=args.d, alpha=args.alpha,
                     beta=args.beta, params=params)


def _graph(args):
    """Graph from --graph, --named or a fresh configuration-model draw, with its provenance."""
    if args.graph:
        graph = load_graph(args.graph)
        return graph, graph_provenance(graph, os.path.basename(args.graph))
    if args.named:
        graph = RegularGraph.from_networkx(NAMED_GRAPHS[args.named]())
        return graph, graph_provenance(graph, args.named)
    if args.n is None:
        raise ValueError("give a graph with --graph, --named or --n")
    graph_seed = args.seed if args.graph_seed is None else args.graph_seed
    graph = generate_random_regular(args.d, args.n, graph_seed)
    return graph, graph_provenance(graph, f'configuration-model(seed={graph_seed})')


def _constants(graph, args, spectral_gap=None):
    return ScaleConstants.from_graph(graph.n_vertices, graph.d, args.alpha, args.beta, spectral_gap=spectral_gap)


def _progress(args):
    return not args.quiet


def cmd_graph(args):
    if args.subcommand == 'generate':
        graph, provenance = _graph(args)
        if args.graph_out:
            save_graph(graph, args.graph_out)
            logger.info('graph written to %s', args.graph_out)
        rows = [(v, ' '.join(str(u) for u in graph.neighbors(v))) for v in range(graph.n_vertices)]
        return CommandResult(data=provenance, header=['vertex', 'neighbors'], rows=rows, graph=provenance)
    if args.subcommand == 'audit':
        graph, provenance = _graph(args)
        report = audit_assumptions(graph, args.alpha, args.beta)
        constants = ScaleConstants.from_report(report).as_dict() if report.all_pass else {}
        return CommandResult(data={'audit': report.model_dump(), 'all_pass': report.all_pass,
                                   'constants': constants},
                             graph=provenance, constants=constants, passed=report.all_pass,
                             message=f"graph fails the assumption audit {report.passes}")
    raise ValueError("Invalid graph subcommand")


def cmd_tree(args):
    ball = TreeBall(d=args.d, depth=args.depth)
    if args.subcommand == 'sample':
        fields = sample_tree_gff_batch(ball, args.replicas, args.seed, root_condition=args.root)
        clusters = [forward_cluster(TreeField(ball=ball, values=values, root_condition=args.root), args.h)
                    for values in fields]
        rows = [[i, c.censored, float(fields[i, 0])] + c.level_counts.tolist() for i, c in enumerate(clusters)]
        data = {'h': args.h, 'replicas': args.replicas, 'counts': [c.level_counts.tolist() for c in clusters],
                'censored': [c.censored for c in clusters], 'root_values': fields[:, 0].tolist()}
        if args.replicas == 1:
            data['values'] = fields[0].tolist()
        return CommandResult(data=data, header=['replica', 'censored', 'root_value'] +
                             [f'k{k}' for k in range(ball.depth + 1)], rows=rows)
    if args.subcommand == 'cluster':
        levels = simulate_cluster_levels(args.d, args.h, args.depth, np.random.default_rng(args.seed),
                                         root_value=args.root, forward=not args.full)
        rows = [(k, float(c)) for k, c in enumerate(levels.counts)]
        return CommandResult(data={'counts': levels.counts.tolist(), 'root_value': levels.root_value,
                                   'size': levels.size, 'censored': levels.censored, 'saturated': levels.saturated},
                             header=['k', 'count'], rows=rows)
    if args.subcommand == 'boundary':
        report = boundary_variance_check(ball, None, args.R)
        rows = list(zip(report.vertices, report.distances, report.variances, report.bounds))
        return CommandResult(data=report.model_dump(), header=['vertex', 'distance', 'variance', 'bound'],
                             rows=rows, passed=report.violations == 0,
                             message=f"{report.violations} boundary variance bound violations")
    raise ValueError("Invalid tree subcommand")


def cmd_zagff(args):
    graph, provenance = _graph(args)
    green = build_green(graph)
    if args.subcommand == 'sample':
        if args.replicas == 1:
            values = sample_zagff(green, args.seed).values
            return CommandResult(data={'values': values.tolist(), 'sup_abs': float(np.max(np.abs(values)))},
                                 header=['vertex', 'value'], rows=list(enumerate(values.tolist())),
                                 graph=provenance)
        fields = sample_zagff_batch(green, args.replicas, args.seed)
        rows = [(i, v, float(fields[i, v])) for i in range(args.replicas) for v in range(graph.n_vertices)]
        return CommandResult(data={'replicas': args.replicas, 'values': fields.tolist(),
                                   'sup_abs': np.max(np.abs(fields), axis=1).tolist()},
                             header=['replica', 'vertex', 'value'], rows=rows, graph=provenance)
    if args.subcommand == 'green':
        if args.out_matrix:
            n = graph.n_vertices
            os.makedirs(os.path.dirname(args.out_matrix) or '.', exist_ok=True)
            write_csv([str(y) for y in range(n)], [[float(g) for g in green.column(x)] for x in range(n)],
                      args.out_matrix)
            logger.info('Green matrix written to %s', args.out_matrix)
        dist = graph.distance(args.x, args.y)
        value = green.entry(args.x, args.y)
        return CommandResult(data={'x': args.x, 'y': args.y, 'distance': dist, 'value': value,
                                   'local_bound': local_green_bound(graph.d, dist)}, graph=provenance)
    if args.subcommand == 'identity':
        rng = np.random.default_rng(args.seed)
        residuals = []
        for _ in range(args.replicas):
            size = int(rng.integers(1, graph.n_vertices))
            U = rng.choice(graph.n_vertices, size=size, replace=False).tolist()
            residuals.append(green_identity_residual(green, U))
        worst = max(residuals)
        return CommandResult(data={'replicas': args.replicas, 'max_residual': worst}, graph=provenance,
                             passed=worst <= args.tolerance, message=f"identity residual {worst:.3e} too large")
    if args.subcommand == 'tail':
        frequency = sup_tail_frequency(green, args.c, args.replicas, args.seed)
        return CommandResult(data={'c': args.c, 'replicas': args.replicas, 'frequency': frequency},
                             graph=provenance)
    raise ValueError("Invalid zagff subcommand")


def _field(args, graph):
    if args.field:
        return GraphField(graph, np.asarray(read_field_csv(args.field)), zero_average=False)
    return sample_zagff(build_green(graph), args.seed)


def cmd_perc(args):
    graph, provenance = _graph(args)
    graph_field = _field(args, graph)
    if args.subcommand == 'components':
        decomposition = level_components(graph_field, args.h)
        sizes = decomposition.cluster_sizes()
        rows = [(v, int(decomposition.labels[v]), int(sizes[v])) for v in range(graph.n_vertices)]
        return CommandResult(data={'h': args.h, 'max_size': decomposition.max_size,
                                   'second_size': decomposition.second_size, 'sizes': decomposition.sizes},
                             header=['vertex', 'label', 'cluster_size'], rows=rows, graph=provenance)
    if args.subcommand == 'census':
        constants = _constants(graph, args)
        census = mesoscopic_census(graph_field, args.h, constants, args.gamma)
        return CommandResult(data=census.model_dump(), graph=provenance, constants=constants.as_dict())
    raise ValueError("Invalid perc subcommand")


def cmd_explore(args):
    graph, provenance = _graph(args)
    green = build_green(graph)
    if args.subcommand == 'trace':
        seeds = [args.seed] if args.replicas == 1 else spawn_seeds(args.seed, args.replicas)
        traces = [explore_component(graph, green, args.x, args.h, K=args.K, c_kappa=args.c_kappa, seed=seed,
                                    s=args.s, debug=args.debug) for seed in seeds]
        events = [{'replica': i, **e} for i, trace in enumerate(traces) for e in trace.events]
        if args.trace_out:
            os.makedirs(os.path.dirname(args.trace_out) or '.', exist_ok=True)
            write_jsonl(events, args.trace_out)
            logger.info('exploration trace written to %s', args.trace_out)
        if args.replicas == 1:
            trace = traces[0]
            rows = [(e['step'], e['action'], e['vertex'], '' if e['value'] is None else e['value'], e['pq'],
                     e['sq']) for e in trace.events]
            data = trace.model_dump(exclude={'events'})
            data['cluster_size'] = trace.cluster_size
            return CommandResult(data=data, header=['step', 'action', 'vertex', 'value', 'pq', 'sq'], rows=rows,
                                 events=events, graph=provenance)
        rows = [(i, t.cluster_size, t.k_end, t.stop_reason, t.anomalous) for i, t in enumerate(traces)]
        data = {'x': args.x, 'h': args.h, 'replicas': args.replicas,
                'cluster_sizes': [t.cluster_size for t in traces], 'k_end': [t.k_end for t in traces],
                'stop_reasons': [t.stop_reason for t in traces], 'anomalous': [t.anomalous for t in traces]}
        return CommandResult(data=data, header=['replica', 'cluster_size', 'k_end', 'stop_reason', 'anomalous'],
                             rows=rows, events=events, graph=provenance)
    if args.subcommand == 'domination':
        report = subtree_domination_experiment(graph, green, args.x, args.h, args.epsilon, args.depth, args.replicas,
                                               args.seed, K=args.K, c_kappa=args.c_kappa, s=args.s, c1=args.c1,
                                               threads=args.threads, progress=_progress(args))
        return CommandResult(data=report.model_dump(), graph=provenance)
    raise ValueError("Invalid explore subcommand")


def cmd_couple(args):
    graph, provenance = _graph(args)
    green = build_green(graph)
    if args.subcommand == 'sample':
        pair = couple_local(green, args.x, args.r, args.R, args.seed, x_prime=args.x_prime)
        rows = [(int(v), float(p), float(q)) for v, p, q in zip(pair.domain, pair.psi, pair.phi)]
        return CommandResult(data={'domain': pair.domain.tolist(), 'psi': pair.psi.tolist(), 'phi': pair.phi.tolist(),
                                   'residual': pair.residual, 'sup_deviation': pair.sup_deviation,
                                   'harmonic_gap': pair.harmonic_gap},
                             header=['vertex', 'psi', 'phi'], rows=rows, graph=provenance)
    if args.subcommand == 'run':
        report = deviation_tail(green, args.x, args.r, args.R, args.replicas, args.seed, x_prime=args.x_prime,
                                epsilons=args.epsilons or list(EPSILON_GRID), threads=args.threads,
                                progress=_progress(args))
        return CommandResult(data=report.model_dump(), header=['replica', 'sup_deviation'],
                             rows=list(enumerate(report.deviations)), graph=provenance)
    if args.subcommand == 'tail':
        epsilons = args.epsilons or list(EPSILON_GRID)
        report = deviation_tail(green, args.x, args.r, args.R, args.replicas, args.seed, x_prime=args.x_prime,
                                epsilons=epsilons, threads=args.threads, progress=_progress(args))
        return CommandResult(data=report.model_dump(), header=['epsilon', 'frequency'],
                             rows=list(zip(report.epsilons, report.frequencies)), graph=provenance)
    if args.subcommand == 'gap':
        gap = chart_killed_green_gap(green, args.x, args.R, x_prime=args.x_prime)
        return CommandResult(data={'x': args.x, 'R': args.R, 'killed_green_gap': gap}, graph=provenance)
    if args.subcommand == 'boundary':
        report = boundary_variance_check(green, args.x, args.R, constants=_constants(graph, args))
        rows = list(zip(report.vertices, report.distances, report.variances, report.bounds))
        return CommandResult(data=report.model_dump(), header=['vertex', 'distance', 'variance', 'bound'],
                             rows=rows, graph=provenance, passed=report.violations == 0,
                             message=f"{report.violations} boundary variance bound violations")
    if args.subcommand == 'proximity':
        s = args.s if args.s is not None else _constants(graph, args).s_n
        reports = good_vertex_gaps(green, args.set_size, args.replicas, args.seed, s)
        rows = [(r.x, r.parent, r.mean_gap, r.var_gap) for r in reports]
        return CommandResult(data={'checked': len(reports),
                                   'max_mean_gap': max((r.mean_gap for r in reports), default=0.0),
                                   'max_var_gap': max((r.var_gap for r in reports), default=0.0)},
                             header=['x', 'parent', 'mean_gap', 'var_gap'], rows=rows, graph=provenance)
    raise ValueError("Invalid couple subcommand")


def _report_result(report, header=None, rows=None):
    return CommandResult(data=report.model_dump(), header=header, rows=rows)


def cmd_estimate(args):
    common = {'threads': args.threads, 'progress': _progress(args)}
    if args.subcommand == 'eta':
        return _report_result(estimate_eta_plus(args.d, args.h, args.depth, args.replicas, args.seed, **common))
    if args.subcommand == 'lambda':
        report = estimate_lambda(args.d, args.h, args.depth, args.replicas, args.seed, **common)
        return _report_result(report, ['k', 'mean_count'], list(enumerate(report.details['mean_counts'])))
    if args.subcommand == 'hstar':
        if not args.h_grid:
            raise ValueError("hstar needs --h-grid")
        report = estimate_h_star(args.d, args.h_grid, args.depth, args.replicas, args.seed, **common)
        return _report_result(report, ['h', 'lambda'], list(zip(report.details['levels'], report.details['rates'])))
    if args.subcommand == 'gh':
        report = check_exp_moment_fixed_point(args.d, args.h, args.deltas, args.depth, args.replicas, args.seed,
                                              h_star=args.h_star, **common)
        rows = [(row.delta, row.diverged, row.accepted, max(row.residuals, default=math.nan)) for row in report.rows]
        return _report_result(report, ['delta', 'diverged', 'accepted', 'max_residual'], rows)
    if args.subcommand == 'growth':
        report = sphere_growth_check(args.d, args.h, args.depth, args.replicas, args.seed, **common)
        rows = [(row.k, row.threshold, row.frequency, row.standard_error, row.consistent) for row in report.rows]
        return _report_result(report, ['k', 'threshold', 'frequency', 'standard_error', 'consistent'], rows)
    raise ValueError("Invalid estimate subcommand")


EXPERIMENT_FIELDS = ('h', 'ladder', 'graphs', 'replicas', 'K', 'c_kappa', 'h_star', 'gamma', 'delta', 'depth',
                     'tree_replicas')


def _experiment_config(args):
    if getattr(args, 'resolved', None):
        return ExperimentConfig.model_validate(args.resolved)
    overrides = {name: getattr(args, name) for name in EXPERIMENT_FIELDS}
    overrides.update(d=args.d, seed=args.seed, alpha=args.alpha, beta=args.beta)
    if args.config:
        config = load_experiment_config(args.config, **overrides)
    else:
        config = ExperimentConfig.model_validate({k: v for k, v in overrides.items() if v is not None})
    # the manifest keeps the resolved config, not the file it came from
    args.resolved = config.model_dump()
    args.config = None
    args.d, args.seed, args.alpha, args.beta = config.d, config.seed, config.alpha, config.beta
    for name in EXPERIMENT_FIELDS:
        setattr(args, name, None)
    return config


def cmd_experiment(args):
    config = _experiment_config(args)
    runner = {'subcritical': run_subcritical_experiment,
              'supercritical': run_supercritical_experiment}[args.subcommand]
    report = runner(config, threads=args.threads, progress=_progress(args))
    columns = sorted(report.rungs[0].statistics)
    rows = [[rung.n, rung.samples] + [rung.statistics[c] for c in columns] for rung in report.rungs]
    failed = [name for name, ok in report.checks.items() if not ok]
    return CommandResult(data=report.model_dump(), header=['n', 'samples'] + columns, rows=rows,
                         constants=report.constants, passed=report.passed, message=f"failed checks: {failed}")


def cmd_replay(args):
    """Re-run the command recorded in a manifest."""
    manifest = read_json(args.manifest)
    config = RunConfig.model_validate(manifest['config'])
    replay = argparse.Namespace(**DEFAULT_RUNTIME)
    replay.__dict__.update(config.params)
    replay.__dict__.update(command=config.command, subcommand=config.subcommand, seed=config.seed, d=config.d,
                           alpha=config.alpha, beta=config.beta, threads=args.threads,
                           output_path=args.output_path, format=args.format, quiet=args.quiet,
                           handler=HANDLERS[config.command])
    return replay


HANDLERS = {'graph': cmd_graph, 'tree': cmd_tree, 'zagff': cmd_zagff, 'perc': cmd_perc, 'explore': cmd_explore,
            'couple': cmd_couple, 'estimate': cmd_estimate, 'experiment': cmd_experiment}

DEFAULT_RUNTIME = {'threads': None, 'output_path': None, 'format': 'json', 'quiet': True, 'log_level': 'WARNING',
                   'events': False, 'graph_out': None, 'trace_out': None, 'out_matrix': None}


def _add_common(parser):
    parser.add_argument("--seed", type=int, default=0,
                        help='master seed; every random stream of the run is derived from it')
    parser.add_argument("--threads", type=int, default=None,
                        help='number of workers, overrides the GFFPERC_THREADS environment variable')
    fmt = parser.add_mutually_exclusive_group()
    fmt.add_argument("--json", dest='format', action='store_const', const='json', help='write a JSON report')
    fmt.add_argument("--csv", dest='format', action='store_const', const='csv', help='write a CSV table')
    parser.set_defaults(format='json')
    parser.add_argument("--output_path", type=str, default=None,
                        help='output directory; if not specified, the report is printed to stdout')
    parser.add_argument("--quiet", action='store_true', help='disable progress bars')
    parser.add_argument("--log-level", dest='log_level', type=str, default='WARNING',
                        help='logging level, can select from ["DEBUG", "INFO", "WARNING", "ERROR"]')
    parser.add_argument("--d", type=int, default=3, help='degree of the regular graph or tree')
    parser.add_argument("--alpha", type=float, default=DEFAULT_ALPHA, help='local tree-likeness exponent in (0, 1]')
    parser.add_argument("--beta", type=float, default=DEFAULT_BETA, help='spectral gap lower bound in (0, 2]')


def _add_graph_source(parser):
    parser.add_argument("--graph", "--in", dest='graph', type=str, default=None,
                        help='graph file written by "graph generate"')
    parser.add_argument("--named", type=str, default=None, choices=sorted(NAMED_GRAPHS),
                        help='small named graph, can select from ["k4", "petersen"]')
    parser.add_argument("--n", type=int, default=None, help='number of vertices of a fresh random graph')
    parser.add_argument("--graph_seed", type=int, default=None,
                        help='seed of the fresh random graph; if not specified, --seed is used')


def _subparser(subparsers, name, help_text, graph_source=True, aliases=()):
    parser = subparsers.add_parser(name, help=help_text, aliases=list(aliases))
    _add_common(parser)
    if graph_source:
        _add_graph_source(parser)
    return parser


def build_parser():
    parser = argparse.ArgumentParser(prog='gffperc', description='level-set percolation of the zero-average GFF')
    commands = parser.add_subparsers(dest='command', required=True)

    graph = commands.add_parser('graph', help='random regular graphs and their assumption audit')
    graph_sub = graph.add_subparsers(dest='subcommand', required=True)
    p = _subparser(graph_sub, 'generate', 'draw a graph from the configuration model', aliases=['gen'])
    p.add_argument("--graph_out", "--out", dest='graph_out', type=str, default=None, help='file to save the graph to')
    _subparser(graph_sub, 'audit', 'check connectivity, local tree-likeness and the spectral gap')

    tree = commands.add_parser('tree', help='GFF on the d-regular tree')
    tree_sub = tree.add_subparsers(dest='subcommand', required=True)
    for name, help_text in (('sample', 'sample the tree GFF on a ball'),
                            ('cluster', 'grow the level-set cluster of the root sphere by sphere'),
                            ('boundary', 'exact boundary-harmonic variances against their bound')):
        p = _subparser(tree_sub, name, help_text, graph_source=False)
        p.add_argument("--depth", type=int, default=8, help='radius of the tree ball')
        p.add_argument("--root", type=float, default=None, help='pin the root value')
        p.add_argument("--h", type=float, default=0.0, help='level')
        p.add_argument("--full", action='store_true', help='let the root have d children instead of d-1')
        p.add_argument("--R", type=int, default=4, help='sphere radius for the boundary check')
        p.add_argument("--replicas", type=int, default=1, help='number of independent fields for sample')

    zagff = commands.add_parser('zagff', help='zero-average Gaussian free field on a graph')
    zagff_sub = zagff.add_subparsers(dest='subcommand', required=True)
    p = _subparser(zagff_sub, 'sample', 'sample independent fields')
    p.add_argument("--replicas", type=int, default=1)
    p = _subparser(zagff_sub, 'green', 'one Green function entry next to its local bound')
    p.add_argument("--x", type=int, default=0)
    p.add_argument("--y", type=int, default=1)
    p.add_argument("--out-matrix", dest='out_matrix', type=str, default=None,
                   help='also write the whole Green matrix as a row-major CSV')
    p = _subparser(zagff_sub, 'identity', 'decomposition of G through a random set U')
    p.add_argument("--replicas", type=int, default=20)
    p.add_argument("--tolerance", type=float, default=1e-9)
    p = _subparser(zagff_sub, 'tail', 'frequency of sup |Psi| >= c sqrt(ln N)')
    p.add_argument("--c", type=float, default=DEFAULT_C_KAPPA)
    p.add_argument("--replicas", type=int, default=DEFAULT_REPLICAS)

    perc = commands.add_parser('perc', help='level-set components and mesoscopic census')
    perc_sub = perc.add_subparsers(dest='subcommand', required=True)
    for name, help_text in (('components', 'components of the level set above h'),
                            ('census', 'count vertices with large forward-sphere clusters')):
        p = _subparser(perc_sub, name, help_text)
        p.add_argument("--h", type=float, required=True, help='level')
        p.add_argument("--field", type=str, default=None, help='field CSV; if not specified, a field is sampled')
        p.add_argument("--gamma", type=float, default=0.1, help='cluster size exponent for the census')

    explore = commands.add_parser('explore', help='exploration of the level-set component of a vertex')
    explore_sub = explore.add_subparsers(dest='subcommand', required=True)
    for name, help_text, replicas, aliases in (
            ('trace', 'run the exploration and record its events', 1, ['run']),
            ('domination', 'compare explored subtrees with tree clusters at a lower level', DEFAULT_REPLICAS, [])):
        p = _subparser(explore_sub, name, help_text, aliases=aliases)
        p.add_argument("--x", type=int, default=0, help='start vertex')
        p.add_argument("--h", type=float, required=True, help='level')
        p.add_argument("--K", type=float, default=DEFAULT_K, help='stop once the cluster has K ln N vertices')
        p.add_argument("--c_kappa", "--ckappa", dest='c_kappa', type=float, default=DEFAULT_C_KAPPA,
                       help='anomaly threshold constant')
        p.add_argument("--s", type=int, default=None, help='goodness radius; if not specified, s_n is used')
        p.add_argument("--debug", action='store_true', help='check the queue invariants after every step')
        p.add_argument("--events", action='store_true', help='also write the event log as JSON lines')
        p.add_argument("--trace-out", dest='trace_out', type=str, default=None,
                       help='JSON-lines file for the events of every replica')
        p.add_argument("--epsilon", type=float, default=0.5)
        p.add_argument("--depth", type=int, default=20)
        p.add_argument("--replicas", type=int, default=replicas)
        p.add_argument("--c1", type=float, default=DEFAULT_C1)

    couple = commands.add_parser('couple', help='local coupling of the graph field with the tree field')
    couple_sub = couple.add_subparsers(dest='subcommand', required=True)
    for name, help_text in (('sample', 'one coupled pair'), ('run', 'sup deviation of independent couplings'),
                            ('tail', 'tail of the sup deviation over an epsilon grid'),
                            ('gap', 'killed Green function on the graph against its tree chart'),
                            ('boundary', 'boundary-harmonic variances against their bound'),
                            ('proximity', 'conditional law at good vertices against the tree law')):
        p = _subparser(couple_sub, name, help_text)
        p.add_argument("--x", type=int, default=0)
        p.add_argument("--x_prime", "--xprime", dest='x_prime', type=int, default=None,
                       help='second centre for the pair coupling')
        p.add_argument("--r", type=int, default=1)
        p.add_argument("--R", type=int, default=2)
        p.add_argument("--replicas", type=int, default=DEFAULT_REPLICAS)
        p.add_argument("--epsilons", type=float, nargs='+', default=None)
        p.add_argument("--s", type=int, default=None)
        p.add_argument("--set_size", type=int, default=3)

    estimate = commands.add_parser('estimate', help='Monte Carlo estimates on the d-regular tree')
    estimate_sub = estimate.add_subparsers(dest='subcommand', required=True)
    for name, help_text in (('eta', 'forward percolation probability'), ('lambda', 'sphere growth rate'),
                            ('hstar', 'critical level by bisection'), ('gh', 'exponential-moment fixed point'),
                            ('growth', 'sphere-growth check')):
        p = _subparser(estimate_sub, name, help_text, graph_source=False)
        p.add_argument("--h", type=float, default=0.0, help='level')
        p.add_argument("--h-grid", dest='h_grid', type=float, nargs='+', default=None, help='levels for hstar')
        p.add_argument("--depth", type=int, default=20, help='truncation depth of the tree')
        p.add_argument("--replicas", type=int, default=DEFAULT_REPLICAS * 10)
        p.add_argument("--deltas", type=float, nargs='+', default=[0.0, 0.05, 0.1, 0.2])
        p.add_argument("--h_star", type=float, default=None, help='critical level estimate, checked against --h')

    experiment = commands.add_parser('experiment', help='ladder experiments on random regular graphs')
    experiment_sub = experiment.add_subparsers(dest='subcommand', required=True)
    for name in ('subcritical', 'supercritical'):
        p = _subparser(experiment_sub, name, f'{name} ladder experiment', graph_source=False)
        p.add_argument("--config", type=str, default=None, help='experiment config in .json or .yaml')
        p.add_argument("--h", type=float, default=None)
        p.add_argument("--ladder", type=int, nargs='+', default=None)
        p.add_argument("--graphs", type=int, default=None)
        p.add_argument("--replicas", type=int, default=None)
        p.add_argument("--K", type=float, default=None)
        p.add_argument("--c_kappa", type=float, default=None)
        p.add_argument("--h_star", type=float, default=None)
        p.add_argument("--gamma", type=float, default=None)
        p.add_argument("--delta", type=float, default=None)
        p.add_argument("--depth", type=int, default=None)
        p.add_argument("--tree_replicas", type=int, default=None)
        p.set_defaults(d=None, seed=None, alpha=None, beta=None)

    replay = commands.add_parser('replay', help='re-run a command from its manifest')
    replay.add_argument("manifest", type=str)
    replay.add_argument("--threads", type=int, default=None)
    replay.add_argument("--output_path", type=str, default=None)
    fmt = replay.add_mutually_exclusive_group()
    fmt.add_argument("--json", dest='format', action='store_const', const='json')
    fmt.add_argument("--csv", dest='format', action='store_const', const='csv')
    replay.set_defaults(format='json')
    replay.add_argument("--quiet", action='store_true')
    replay.add_argument("--log-level", dest='log_level', type=str, default='WARNING')

    for name, handler in HANDLERS.items():
        commands.choices[name].set_defaults(handler=handler)
    replay.set_defaults(handler=None, subcommand=None)
    return parser


def _table(result):
    if result.header is not None:
        return result.header, result.rows
    scalars = [(key, value) for key, value in sorted(result.data.items())
               if isinstance(value, (int, float, str, bool)) or value is None]
    return ['key', 'value'], [(key, '' if value is None else value) for key, value in scalars]


def emit(result, config, args, manifest):
    """Write the report (and the manifest next to it) or print it to stdout."""
    digest = manifest.config_hash
    if args.format == 'csv':
        header, rows = _table(result)
    if args.output_path:
        os.makedirs(args.output_path, exist_ok=True)
        path = get_exact_output_path(args.output_path, config.command, config.subcommand, config.seed, args.format)
        if args.format == 'json':
            write_json(result.data, path, manifest=digest)
        else:
            write_csv(header, rows, path, manifest=digest)
        manifest_path = get_exact_output_path(args.output_path, config.command, f'{config.subcommand}_manifest',
                                              config.seed, 'json')
        write_json(manifest.model_dump(), manifest_path)
        if result.events is not None and getattr(args, 'events', False):
            write_jsonl(result.events, get_exact_output_path(args.output_path, config.command,
                                                             f'{config.subcommand}_events', config.seed, 'jsonl'),
                        manifest=digest)
        logger.info('report written to %s', path)
        return path
    if args.format == 'json':
        sys.stdout.write(canonical_json({**result.data, 'manifest_hash': digest}) + '\n')
    else:
        buffer = io.StringIO()
        buffer.write(f'# manifest={digest}\n' + ','.join(header) + '\n')
        for row in rows:
            buffer.write(','.join(format_cell(c) for c in row) + '\n')
        sys.stdout.write(buffer.getvalue())
    return None


def run(args):
    if args.command == 'replay':
        args = cmd_replay(args)
    args.subcommand = SUBCOMMAND_ALIASES.get((args.command, args.subcommand), args.subcommand)
    start = time.perf_counter()
    result = args.handler(args)
    config = run_config(args)
    logger.info('%s %s finished in %.2fs', config.command, config.subcommand, time.perf_counter() - start)
    manifest = build_manifest(config, graph=result.graph, constants=result.constants)
    emit(result, config, args, manifest)
    if not result.passed:
        raise CheckFailed(result.message)
    return result


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level.upper(), logging.WARNING),
                        format='%(asctime)s %(name)s %(levelname)s %(message)s')
    try:
        run(args)
    except CheckFailed as e:
        logger.error('check failed: %s', e)
        return EXIT_CHECK_FAILED
    except (GffPercError, ValueError, OSError, KeyError) as e:
        logger.error('%s', e)
        return EXIT_ERROR
    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
