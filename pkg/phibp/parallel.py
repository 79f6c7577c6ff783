import logging
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, List, Optional

from .settings import settings

logger = logging.getLogger(__name__)


def worker_count(requested: Optional[int] = None, tasks: Optional[int] = None) -> int:
    """
    Number of worker processes, capped by PHIBP_THREADS.

    Args:
        requested (int, optional): Desired workers; the cap when None.
        tasks (int, optional): Number of tasks; never exceeded.

    Returns:
        int: At least 1.
    """
    n = settings.PHIBP_THREADS if requested is None else min(requested, settings.PHIBP_THREADS)
    if tasks is not None:
        n = min(n, tasks)
    return max(1, n)


def map_tasks(fn: Callable, tasks: Iterable, workers: Optional[int] = None) -> List:
    """
    Apply `fn` to each task, in order, in worker processes when allowed.

    Results do not depend on the number of workers as long as each task
    carries its own random stream.

    Args:
        fn (Callable): Picklable function of one argument.
        tasks (Iterable): Task arguments.
        workers (int, optional): Requested workers.

    Returns:
        list: Results in task order.
    """
    tasks = list(tasks)
    n = worker_count(workers, len(tasks))
    if n == 1:
        return [fn(task) for task in tasks]

    logger.info("Running %d tasks on %d workers", len(tasks), n)
    with ProcessPoolExecutor(max_workers=n) as executor:
        return list(executor.map(fn, tasks))
