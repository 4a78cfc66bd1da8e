"""
Пул процессов для генерации группы данных и повторов обучения.

При workers <= 1 задачи выполняются в текущем процессе, порядок результатов
совпадает с порядком входных элементов в обоих режимах.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, Iterator, TypeVar

T = TypeVar("T")
R = TypeVar("R")

logger = logging.getLogger(__name__)


class WorkerPool:
    """Контекстный менеджер над ProcessPoolExecutor"""

    def __init__(self, workers: int = 1):
        self.workers = max(1, int(workers))
        self._executor: ProcessPoolExecutor | None = None

    def __enter__(self) -> "WorkerPool":
        if self.workers > 1:
            logger.info(f"Запуск пула из {self.workers} процессов")
            self._executor = ProcessPoolExecutor(max_workers=self.workers)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        if self._executor is not None:
            self._executor.shutdown(wait=True, cancel_futures=exc_type is not None)
            self._executor = None

    def map(self, fn: Callable[[T], R], items: Iterable[T]) -> Iterator[R]:
        if self._executor is None:
            return map(fn, items)
        return self._executor.map(fn, items)
