"""
Определение места КЗ целиком: оценка параметров, выбор целевой выборки,
многократное обучение, сравнение с обучением на всей группе и методом Такаги.
"""

import json
import logging
import math
from pathlib import Path

import numpy as np

from app.metrics import observe_stage, record_estimation_error
from config import Settings, get_settings
from ml.network import MlpConfig
from ml.model_manager import get_model_manager
from ml.training import RepeatedLocation, TrainedModel, locate_repeated, train
from models.dataset import DataGroupManifest
from models.estimation import ParameterEstimate
from models.line import LineParameters
from models.records import FaultType, WaveformRecord
from models.report import FaultLocationReport, LocationDistribution
from services.dataset import TargetDataset, full_dataset, normalize_sample, select_target, split_train_val
from services.estimation import estimate_all
from services.exceptions import EstimationError, FaultLocationError, InputDataError, stage_scope
from services.records import extract_window, resample
from services.signals import rotate_phases
from services.takagi import loop_name, takagi_timeline

logger = logging.getLogger(__name__)

PERTURBATION_LIMIT = 0.5


def perturb_line_parameters(line: LineParameters, fraction: float) -> LineParameters:
    """
    Все погонные параметры, умноженные на (1 + fraction).

    Raises:
        InputDataError: |fraction| > 0.5
    """
    if not -PERTURBATION_LIMIT <= fraction <= PERTURBATION_LIMIT:
        raise InputDataError(f"Доля искажения {fraction} вне [−{PERTURBATION_LIMIT}, {PERTURBATION_LIMIT}]")
    if fraction == 0:
        return line
    return line.scaled(1.0 + fraction)


def mlp_config(settings: Settings) -> MlpConfig:
    ml = settings.ml
    return MlpConfig(hidden_layers=ml.hidden_layers, learning_rate=ml.learning_rate,
                     batch_size=ml.batch_size, epochs=ml.epochs, seed=settings.app.seed)


def fault_window(record: WaveformRecord, fault_type: FaultType | str, estimate: ParameterEstimate,
                 manifest: DataGroupManifest, samples_per_cycle: int = 80) -> np.ndarray:
    """Нормированное окно 81×6 записи вокруг t_f в фазах канонического вида КЗ"""
    rotated = rotate_phases(record, fault_type).record
    if rotated.samples_per_cycle != samples_per_cycle:
        rotated = resample(rotated, samples_per_cycle)
    sample = extract_window(rotated, estimate.t_f_index, samples_per_cycle)
    return normalize_sample(sample, manifest)


def _distribution(result: RepeatedLocation, dataset_size: int) -> LocationDistribution:
    return LocationDistribution(
        mean_km=result.mean_km, std_km=result.std_km,
        predictions_km=[float(x) for x in result.predictions],
        seeds=result.seeds, diverged_seeds=result.diverged, dataset_size=dataset_size,
    )


def _train_and_locate(dataset: TargetDataset, window: np.ndarray, line: LineParameters,
                      settings: Settings) -> LocationDistribution:
    X, y, _ = dataset.load_arrays()
    result = locate_repeated(
        X, y, window, mlp_config(settings), line.length_km, n=settings.ml.repetitions,
        fraction=settings.dataset.train_fraction, workers=settings.app.workers,
        divergence_limit=settings.ml.divergence_limit,
    )
    return _distribution(result, len(X))


def save_target_model(dataset: TargetDataset, manifest: DataGroupManifest, line: LineParameters,
                      settings: Settings, path: str | Path) -> TrainedModel:
    """Обучить сеть с главным seed на целевой выборке, сохранить её и журнал обучения"""
    X, y, _ = dataset.load_arrays()
    train_set, val_set = split_train_val(X, y, fraction=settings.dataset.train_fraction, seed=settings.app.seed)
    model = train(train_set, val_set, mlp_config(settings), line.length_km,
                  voltage_base=manifest.voltage_base, current_base=manifest.current_base)
    manager = get_model_manager()
    path = manager.save(model, path)
    manager.write_training_log(model, path.with_suffix(".csv"))
    return model


def locate(record: WaveformRecord, fault_type: FaultType | str, line: LineParameters,
           manifest: DataGroupManifest, group_root: str | Path, settings: Settings | None = None, *,
           compare_traditional: bool = False, with_takagi: bool = True,
           model_path: str | Path | None = None) -> FaultLocationReport:
    """
    Определить место КЗ по однократной записи с помощью заранее построенной группы.

    Ошибки основного пути пробрасываются с меткой этапа; ошибки сравнения
    (обучение на всей группе, Такаги) попадают в report.errors.
    При model_path дополнительно сохраняется сеть, обученная с главным seed,
    и журнал её обучения в CSV рядом с ней.
    """
    settings = settings or get_settings()
    n_cycle = settings.signals.samples_per_cycle
    timings: dict[str, float] = {}
    logger.info(f"Определение места КЗ {FaultType(fault_type).value} на линии {line.length_km} км")

    with observe_stage("estimate", timings):
        try:
            estimate = estimate_all(record, fault_type, line, settings.signals, settings.estimation)
        except EstimationError as e:
            record_estimation_error(type(e).__name__)
            logger.error(f"Оценка параметров не удалась: {e}")
            raise

    with observe_stage("select", timings), stage_scope("select"):
        window = fault_window(record, fault_type, estimate, manifest, n_cycle)
        target = select_target(manifest, estimate, group_root, fia_lag_deg=settings.dataset.fia_lag_deg)

    with observe_stage("train", timings), stage_scope("train"):
        proposed = _train_and_locate(target, window, line, settings)
        if model_path is not None:
            save_target_model(target, manifest, line, settings, model_path)

    report = FaultLocationReport(
        fault_type=FaultType(fault_type), line_length_km=line.length_km, estimate=estimate,
        selection=target.selection, proposed=proposed, config=settings.echo(), timings=timings,
    )

    if compare_traditional:
        with observe_stage("traditional", timings):
            try:
                with stage_scope("traditional"):
                    dataset = full_dataset(manifest, estimate.fault_type, group_root)
                    report.traditional = _train_and_locate(dataset, window, line, settings)
            except FaultLocationError as e:
                logger.error(f"Обучение на всей группе не удалось: {e}")
                report.errors["traditional"] = str(e)

    if with_takagi:
        with observe_stage("takagi", timings):
            try:
                report.takagi_timeline = takagi_timeline(
                    record, line, fault_type, samples_per_cycle=n_cycle, t_f=estimate.t_f_index,
                )
                report.takagi_loop = loop_name(estimate.fault_type)
            except FaultLocationError as e:
                logger.error(f"Метод Такаги не применим: {e}")
                report.errors["takagi"] = str(e)

    report.timings = timings
    logger.info(
        f"Место КЗ: {proposed.mean_km:.3f} км (СКО {proposed.std_km:.3f}), "
        f"без отбора: {report.traditional_km if report.traditional else '-'}"
    )
    return report


# ---------------------------------------------------------------------------
# Экспорт
# ---------------------------------------------------------------------------

def write_report(report: FaultLocationReport, path: str | Path) -> tuple[Path, Path]:
    """JSON-отчёт и отдельный файл времени этапов"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(report.model_dump_json(indent=2), encoding="utf-8")
    timings_path = path.with_name(path.stem + ".timings.json")
    timings_path.write_text(json.dumps(report.timings, indent=2, sort_keys=True), encoding="utf-8")
    logger.info(f"Отчёт записан в {path}")
    return path, timings_path


def load_report(path: str | Path) -> FaultLocationReport:
    try:
        return FaultLocationReport.model_validate_json(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise InputDataError(f"Отчёт не найден: {path}") from e


def histogram(values) -> tuple[np.ndarray, np.ndarray]:
    """Гистограмма с шириной бинов по правилу Фридмана-Диакониса"""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    edges = np.histogram_bin_edges(values, bins="fd")
    counts, edges = np.histogram(values, bins=edges)
    return counts, edges


def write_histogram_csv(distribution: LocationDistribution, path: str | Path) -> Path:
    path = Path(path)
    counts, edges = histogram(distribution.predictions_km)
    lines = ["bin_left_km,bin_right_km,count"]
    lines += [f"{left:.6f},{right:.6f},{count}" for left, right, count in zip(edges[:-1], edges[1:], counts)]
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def export_histograms(report: FaultLocationReport, out_dir: str | Path) -> list[Path]:
    """CSV-гистограммы распределений отчёта (предложенный метод и обучение на всей группе)"""
    out_dir = Path(out_dir)
    written = []
    for name in ("proposed", "traditional"):
        distribution = getattr(report, name)
        if distribution is not None:
            written.append(write_histogram_csv(distribution, out_dir / f"{name}_histogram.csv"))
    return written


def location_error(report: FaultLocationReport, true_km: float) -> dict[str, float]:
    """Погрешности методов отчёта относительно известного места КЗ, км"""
    errors = {}
    if report.proposed is not None:
        errors["proposed"] = abs(report.proposed.mean_km - true_km)
    if report.traditional is not None:
        errors["traditional"] = abs(report.traditional.mean_km - true_km)
    half_cycle_ms = 1e3 / (2.0 * report.estimate.frequency)
    for point in report.takagi_timeline:
        if point.distance_km is not None and math.isclose(point.time_ms, half_cycle_ms, abs_tol=1e-6):
            errors["takagi_half_cycle"] = abs(point.distance_km - true_km)
    return errors
