import logging
import os
from multiprocessing import Pool, cpu_count
from typing import Callable, Iterable, TypeVar

from tqdm import tqdm

from core.errors import ConfigError

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

WORKERS_ENV = "CZKIT_WORKERS"


def resolve_workers(workers: int | None = None) -> int:
    """Explicit argument, then $CZKIT_WORKERS, then cpu_count()."""
    if workers is None:
        env = os.environ.get(WORKERS_ENV)
        if env is None:
            return cpu_count()
        try:
            workers = int(env)
        except ValueError:
            raise ConfigError(f"{WORKERS_ENV}={env!r} is not an integer")
    if workers < 1:
        raise ConfigError(f"worker count must be >= 1, got {workers}")
    return workers


def ordered_map(
    func: Callable[[T], R],
    tasks: Iterable[T],
    workers: int | None = 1,
    desc: str | None = None,
    progress: bool = False,
) -> list[R]:
    """
    Map `func` over `tasks`, returning results in task order whatever the worker count.
    `func` must be a picklable top-level callable when more than one worker is used.
    """
    tasks = list(tasks)
    workers = min(resolve_workers(workers), max(1, len(tasks)))
    if workers == 1:
        return [func(task) for task in tqdm(tasks, desc=desc, disable=not progress)]
    logger.debug("fanning %d tasks out to %d workers", len(tasks), workers)
    with Pool(workers) as pool:
        return list(tqdm(pool.imap(func, tasks), total=len(tasks), desc=desc, disable=not progress))
