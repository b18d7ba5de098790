from .constants import (DENSE_THRESHOLD, KERNEL_TOL, LANCZOS_TOL, CHEBYSHEV_TOL, CG_TOL, RETRY_FACTOR,
                        DEFAULT_ALPHA, DEFAULT_BETA, DEFAULT_K, DEFAULT_C_KAPPA, DEFAULT_C1,
                        LOG_OVERFLOW_GUARD, MAX_FRONTIER, ESTIMATOR_FRONTIER, REPLICA_CHUNK,
                        BOOTSTRAP_RESAMPLES, EPSILON_GRID, LADDER, DEFAULT_REPLICAS,
                        THREADS_ENV, EXIT_OK, EXIT_ERROR, EXIT_CHECK_FAILED)
from .preprocess_utils import read_json, read_yaml, read_config, read_field_csv
from .postprocess_utils import (canonical_json, manifest_hash, get_exact_output_path, write_json, write_csv,
                                write_jsonl, format_cell)

__all__ = [
    "DENSE_THRESHOLD",
    "KERNEL_TOL",
    "LANCZOS_TOL",
    "CHEBYSHEV_TOL",
    "CG_TOL",
    "RETRY_FACTOR",
    "DEFAULT_ALPHA",
    "DEFAULT_BETA",
    "DEFAULT_K",
    "DEFAULT_C_KAPPA",
    "DEFAULT_C1",
    "LOG_OVERFLOW_GUARD",
    "MAX_FRONTIER",
    "ESTIMATOR_FRONTIER",
    "REPLICA_CHUNK",
    "BOOTSTRAP_RESAMPLES",
    "EPSILON_GRID",
    "LADDER",
    "DEFAULT_REPLICAS",
    "THREADS_ENV",
    "EXIT_OK",
    "EXIT_ERROR",
    "EXIT_CHECK_FAILED",
    "read_json",
    "read_yaml",
    "read_config",
    "read_field_csv",
    "canonical_json",
    "manifest_hash",
    "get_exact_output_path",
    "write_json",
    "write_csv",
    "write_jsonl",
    "format_cell",
]
