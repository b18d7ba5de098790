# evaluation/evaluate_report.py

import json
import sys

sys.path.append('')
from utils import read_json
from gffperc.estimators import EstimateReport
from gffperc.experiments import ExperimentReport


def evaluate_experiment(report_file):
    """
    Summarise a ladder experiment report: per-rung statistics and the outcome of every check
    """
    data = read_json(report_file)
    manifest = data.pop('manifest_hash', None)
    report = ExperimentReport.model_validate(data)

    results = {
        'experiment': report.experiment,
        'h': report.h,
        'manifest': manifest,
        'rungs': [],
        'checks': dict(report.checks),
        'passed': report.passed,
    }
    for rung in report.rungs:
        results['rungs'].append({'n': rung.n, 'samples': rung.samples, 'rejected': rung.rejected_graphs,
                                 **rung.statistics})
    return results


def evaluate_estimate(report_file):
    data = read_json(report_file)
    data.pop('manifest_hash', None)
    report = EstimateReport.model_validate(data)
    return {'quantity': report.quantity, 'estimate': report.estimate, 'standard_error': report.standard_error,
            'interval': report.interval, 'replicas': report.replicas, 'censored': report.censored,
            'flags': report.flags}


if __name__ == "__main__":
    import argparse
    parser = argparse.ArgumentParser()
    parser.add_argument("--report_file", default=None)
    parser.add_argument("--kind", default='experiment', type=str,
                        help='which report to read, can select from ["experiment", "estimate"]')
    parser.add_argument("--schema", action='store_true', help='print the JSON schema of the report kind and exit')
    args = parser.parse_args()

    if args.schema:
        model = ExperimentReport if args.kind == 'experiment' else EstimateReport
        print(json.dumps(model.model_json_schema(), indent=2))
        sys.exit(0)
    if args.report_file is None:
        parser.error("--report_file is required")

    if args.kind == 'experiment':
        scores = evaluate_experiment(args.report_file)
        print("\n" + "="*50)
        print(f"{scores['experiment'].upper()} EXPERIMENT AT h = {scores['h']}")
        print("="*50)
        print(f"Manifest: {scores['manifest']}")
        for rung in scores['rungs']:
            stats = ', '.join(f"{key}={value:.4g}" for key, value in rung.items()
                              if key not in ('n', 'samples', 'rejected'))
            print(f"N={rung['n']:>6} samples={rung['samples']} rejected={rung['rejected']}: {stats}")
        print()
        for name, ok in scores['checks'].items():
            print(f"{name}: {'PASS' if ok else 'FAIL'}")
        print("="*50)
    elif args.kind == 'estimate':
        scores = evaluate_estimate(args.report_file)
        print("\n" + "="*50)
        print(f"ESTIMATE OF {scores['quantity'].upper()}")
        print("="*50)
        print(f"Estimate: {scores['estimate']:.4f} +- {scores['standard_error']:.4f}")
        if scores['interval'] is not None:
            print(f"Interval: [{scores['interval'][0]:.4f}, {scores['interval'][1]:.4f}]")
        print(f"Replicas: {scores['replicas']} (censored {scores['censored']})")
        print(f"Flags: {', '.join(scores['flags']) or 'none'}")
        print("="*50)
    else:
        raise ValueError("Invalid report kind")
