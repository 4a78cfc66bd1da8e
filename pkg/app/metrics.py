import time
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator

from prometheus_client import REGISTRY, Counter, Histogram, write_to_textfile


STAGE_DURATION_SECONDS = Histogram(
    "stage_duration_seconds",
    "Time spent in a fault location stage",
    ["stage"],
    buckets=[0.01, 0.05, 0.1, 0.25, 0.5, 1.0, 2.5, 5.0, 10.0, 30.0, 60.0, 300.0, 1800.0],
)

SIMULATIONS_TOTAL = Counter(
    "simulations_total",
    "Total number of simulated fault events",
    ["result"],
)

TRAINING_RUNS_TOTAL = Counter(
    "training_runs_total",
    "Total number of network training runs",
    ["result"],
)

ESTIMATION_ERRORS_TOTAL = Counter(
    "estimation_errors_total",
    "Total number of failed parameter estimations",
    ["error_type"],
)


@contextmanager
def observe_stage(stage: str, timings: dict[str, float] | None = None) -> Iterator[None]:
    """Замерить этап: в гистограмму и (если передан) в словарь времени отчёта"""
    start_time = time.perf_counter()
    try:
        yield
    finally:
        elapsed = time.perf_counter() - start_time
        STAGE_DURATION_SECONDS.labels(stage=stage).observe(elapsed)
        if timings is not None:
            timings[stage] = timings.get(stage, 0.0) + elapsed


def record_simulation(success: bool, count: int = 1) -> None:
    SIMULATIONS_TOTAL.labels(result="ok" if success else "quarantined").inc(count)


def record_training_run(success: bool, count: int = 1) -> None:
    TRAINING_RUNS_TOTAL.labels(result="ok" if success else "diverged").inc(count)


def record_estimation_error(error_type: str) -> None:
    ESTIMATION_ERRORS_TOTAL.labels(error_type=error_type).inc()


def export_metrics(path: str | Path) -> None:
    """Записать реестр в текстовом формате Prometheus"""
    write_to_textfile(str(path), REGISTRY)
