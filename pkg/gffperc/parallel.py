import logging
import os

import numpy as np
from joblib import Parallel, delayed
from tqdm import tqdm

from utils import THREADS_ENV

logger = logging.getLogger(__name__)


def resolve_threads(threads=None):
    """--threads wins over the environment; default is a single worker."""
    if threads is None:
        threads = int(os.environ.get(THREADS_ENV, '1'))
    if threads < 1:
        raise ValueError("thread count must be at least 1")
    return threads


def spawn_seeds(seed, count):
    """One independent child SeedSequence per task index; `seed` may itself be a SeedSequence."""
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    return seed.spawn(count)


def run_tasks(function, tasks, threads=None, desc=None, progress=False):
    """
    Call function(*task) for every task and return the results in task order,
    whatever the number of workers.
    """
    n_jobs = resolve_threads(threads)
    tasks = list(tasks)
    logger.debug('running %d tasks on %d worker(s)', len(tasks), n_jobs)
    iterator = tqdm(tasks, desc=desc, disable=not progress)
    if n_jobs == 1:
        return [function(*task) for task in iterator]
    return Parallel(n_jobs=n_jobs, prefer='threads')(delayed(function)(*task) for task in iterator)
