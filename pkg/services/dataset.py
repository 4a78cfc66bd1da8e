"""
Полная группа данных и целевая выборка.

Генерация: моделирование каждого узла сетки, вырезка окна 81×6 вокруг момента КЗ,
нормировка по базам группы и запись шардов FLDG с манифестом. Выборка: подсетка,
покрывающая оценённые параметры события.
"""

import logging
import math
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np
from pydantic import ValidationError
from sklearn.model_selection import train_test_split

from app.metrics import record_simulation
from app.workers.pool import WorkerPool
from config import DatasetSettings, SignalSettings, SimulationSettings
from models.dataset import (
    DataGroupManifest,
    FaultTypeGroup,
    QuarantineEntry,
    ShardEntry,
    SweepConfig,
    TargetSelection,
)
from models.estimation import ParameterEstimate
from models.records import FaultType, SampleMatrix
from repositories.manifests import ManifestStorage
from repositories.shards import ShardStorage
from services.emt import simulate_event
from services.exceptions import (
    DatasetTooSmallError,
    FaultLocationError,
    GroupGenerationError,
    InsufficientDiskSpaceError,
    SelectionError,
)
from services.records import extract_window
from services.signals import default_prefault_end, detect_fault_initiation, record_modes

logger = logging.getLogger(__name__)

# допустимое расхождение обнаруженного момента КЗ с известным, отсчётов
DETECTION_TOLERANCE = 2
MIN_DATASET_SIZE = 10


def voltage_base(voltage_kv: float) -> float:
    """Амплитуда номинального фазного напряжения, В"""
    return voltage_kv * 1e3 * math.sqrt(2.0) / math.sqrt(3.0)


def normalize_windows(data: np.ndarray, voltage_base: float, current_base: float) -> np.ndarray:
    """Нормировать окна (..., 81, 6): токи на current_base, напряжения на voltage_base"""
    scale = np.array([current_base] * 3 + [voltage_base] * 3, dtype=np.float64)
    return np.asarray(data, dtype=np.float64) / scale


def normalize_sample(sample: SampleMatrix, manifest: DataGroupManifest) -> np.ndarray:
    return normalize_windows(sample.data, manifest.voltage_base, manifest.current_base)


# ---------------------------------------------------------------------------
# Генерация
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _ChunkTask:
    sweep: SweepConfig
    fault_type: FaultType
    spec_indices: tuple[int, ...]
    warmup_cycles: float
    pre_fault_cycles: float
    post_fault_cycles: float
    anti_alias_hz: float
    divergence_energy_ratio: float
    k_ff: float
    noise_floor_ratio: float


class _ChunkResult(NamedTuple):
    records: np.ndarray
    quarantined: list[tuple[int, str]]


def _window_center(record, samples_per_cycle: int, k_ff: float, noise_floor_ratio: float) -> int:
    """Обнаруженный момент КЗ, если он рядом с известным, иначе известный"""
    known = record.trigger_index
    try:
        _, currents = record_modes(record)
        detected = detect_fault_initiation(currents, default_prefault_end(samples_per_cycle),
                                           k_ff=k_ff, noise_floor_ratio=noise_floor_ratio)
    except FaultLocationError:
        return known
    return detected if abs(detected - known) <= DETECTION_TOLERANCE else known


def _simulate_chunk(task: _ChunkTask) -> _ChunkResult:
    windows, labels, indices = [], [], []
    quarantined: list[tuple[int, str]] = []
    for spec_index in task.spec_indices:
        try:
            spec = task.sweep.event_spec(
                task.fault_type, spec_index,
                warmup_cycles=task.warmup_cycles,
                pre_fault_cycles=task.pre_fault_cycles,
                post_fault_cycles=task.post_fault_cycles,
                anti_alias_hz=task.anti_alias_hz,
            )
            record = simulate_event(spec, divergence_energy_ratio=task.divergence_energy_ratio)
            center = _window_center(record, spec.samples_per_cycle, task.k_ff, task.noise_floor_ratio)
            sample = extract_window(record, center, spec.samples_per_cycle, label_km=spec.l_f)
        except (FaultLocationError, ValidationError) as e:
            logger.warning(f"{task.fault_type.value}#{spec_index}: событие в карантине ({e})")
            quarantined.append((spec_index, str(e)))
            continue
        windows.append(sample.data)
        labels.append(spec.l_f)
        indices.append(spec_index)
    if windows:
        records = ShardStorage.pack(np.stack(windows), np.array(labels), np.array(indices))
    else:
        records = np.empty(0, dtype=ShardStorage.RECORD_DTYPE)
    return _ChunkResult(records, quarantined)


def _chunks(indices: list[int], size: int) -> list[tuple[int, ...]]:
    return [tuple(indices[i:i + size]) for i in range(0, len(indices), size)]


def _check_disk_space(root: Path, n_events: int) -> None:
    # частичные и итоговые шарды одновременно
    required = 2 * n_events * ShardStorage.RECORD_DTYPE.itemsize
    existing = root
    while not existing.exists():
        existing = existing.parent
    free = shutil.disk_usage(existing).free
    if required > free:
        raise InsufficientDiskSpaceError(
            f"Для группы нужно {required / 2**20:.1f} МиБ, свободно {free / 2**20:.1f} МиБ"
        )


def _partial_name(fault_type: FaultType, chunk_number: int) -> str:
    return f"{fault_type.value}_{chunk_number:05d}.part"


def _shard_name(fault_type: FaultType, chunk_number: int) -> str:
    return f"{fault_type.value}_{chunk_number:05d}.fldg"


def _current_base(raw_shards: list[np.ndarray], percentile: float) -> float:
    currents = [np.abs(records["data"][:, :, :3]).ravel() for records in raw_shards if len(records)]
    if not currents:
        return 1.0
    base = float(np.percentile(np.concatenate(currents), percentile))
    return base if base > 0 else 1.0


def generate_group(sweep: SweepConfig, out_dir: str | Path, *, workers: int = 1, resume: bool = True,
                   dataset_settings: DatasetSettings | None = None,
                   simulation_settings: SimulationSettings | None = None,
                   signal_settings: SignalSettings | None = None) -> DataGroupManifest:
    """
    Смоделировать все узлы сетки и записать шарды с манифестом.

    Частичные шарды (сырые величины) и их контрольные суммы хранятся в .partial/;
    при resume готовые части с совпадающей суммой не пересчитываются. Неудавшиеся
    события попадают в карантин манифеста.

    Raises:
        InsufficientDiskSpaceError: Не хватает места под шарды
        GroupGenerationError: Доля событий в карантине выше допустимой
    """
    dataset_settings = dataset_settings or DatasetSettings()
    simulation_settings = simulation_settings or SimulationSettings()
    signal_settings = signal_settings or SignalSettings()

    root = Path(out_dir)
    manifests = ManifestStorage(root)
    shards = ShardStorage()
    total = sum(sweep.cardinality(ft) for ft in sweep.fault_types)
    _check_disk_space(root, total)
    logger.info(f"Генерация группы: {total} событий, виды КЗ {[ft.value for ft in sweep.fault_types]}")

    progress = manifests.load_progress() if resume else {}
    raw_by_type: dict[FaultType, list[tuple[int, np.ndarray]]] = {}
    quarantine_by_type: dict[FaultType, list[QuarantineEntry]] = {}

    with WorkerPool(workers) as pool:
        for fault_type in sweep.fault_types:
            chunks = _chunks(sweep.indices(fault_type), dataset_settings.shard_size)
            pending: list[tuple[int, _ChunkTask]] = []
            raw_by_type[fault_type] = []
            quarantine_by_type[fault_type] = []
            for number, chunk in enumerate(chunks):
                name = _partial_name(fault_type, number)
                entry = progress.get(name)
                if entry is not None and shards.checksum(manifests.partial_dir / name) == entry["sha256"]:
                    logger.debug(f"{name}: готов, пропуск")
                    raw_by_type[fault_type].append((number, shards.read(manifests.partial_dir / name)))
                    quarantine_by_type[fault_type].extend(
                        QuarantineEntry(spec_index=i, error=e) for i, e in entry["quarantined"]
                    )
                    continue
                pending.append((number, _ChunkTask(
                    sweep=sweep, fault_type=fault_type, spec_indices=chunk,
                    warmup_cycles=simulation_settings.warmup_cycles,
                    pre_fault_cycles=simulation_settings.pre_fault_cycles,
                    post_fault_cycles=simulation_settings.post_fault_cycles,
                    anti_alias_hz=simulation_settings.anti_alias_hz,
                    divergence_energy_ratio=simulation_settings.divergence_energy_ratio,
                    k_ff=signal_settings.k_ff,
                    noise_floor_ratio=signal_settings.noise_floor_ratio,
                )))

            results = pool.map(_simulate_chunk, [task for _, task in pending])
            for (number, _), result in zip(pending, results):
                name = _partial_name(fault_type, number)
                digest = shards.write(manifests.partial_dir / name, result.records)
                progress[name] = {
                    "sha256": digest,
                    "count": int(len(result.records)),
                    "quarantined": result.quarantined,
                }
                manifests.save_progress(progress)
                record_simulation(True, len(result.records))
                record_simulation(False, len(result.quarantined))
                raw_by_type[fault_type].append((number, result.records))
                quarantine_by_type[fault_type].extend(
                    QuarantineEntry(spec_index=i, error=e) for i, e in result.quarantined
                )
                logger.info(f"{fault_type.value}: часть {number + 1}/{len(chunks)} готова")

    quarantined_total = sum(len(q) for q in quarantine_by_type.values())
    if total and quarantined_total > dataset_settings.quarantine_limit * total:
        raise GroupGenerationError(
            f"В карантине {quarantined_total} из {total} событий "
            f"(допустимо {dataset_settings.quarantine_limit:.1%})"
        )

    v_base = voltage_base(sweep.voltage_kv)
    i_base = _current_base(
        [records for parts in raw_by_type.values() for _, records in parts],
        dataset_settings.current_percentile,
    )
    groups = []
    for fault_type in sweep.fault_types:
        entries = []
        for number, records in sorted(raw_by_type[fault_type], key=lambda part: part[0]):
            if not len(records):
                continue
            normalized = ShardStorage.pack(
                normalize_windows(records["data"], v_base, i_base), records["label"], records["spec_index"]
            )
            name = _shard_name(fault_type, number)
            entries.append(ShardEntry(
                file=name, count=len(normalized),
                first_index=int(normalized["spec_index"].min()),
                last_index=int(normalized["spec_index"].max()),
                sha256=shards.write(root / name, normalized),
            ))
        groups.append(FaultTypeGroup(
            fault_type=fault_type, expected_count=sweep.cardinality(fault_type),
            shards=entries, quarantined=sorted(quarantine_by_type[fault_type], key=lambda q: q.spec_index),
        ))

    manifest = DataGroupManifest(sweep=sweep, groups=groups, voltage_base=v_base, current_base=i_base)
    manifests.save(manifest)
    logger.info(f"Группа готова: {manifest.record_count} записей, карантин {quarantined_total}")
    return manifest


# ---------------------------------------------------------------------------
# Выбор целевой выборки
# ---------------------------------------------------------------------------

def bracket_indices(values, estimate: float, rel_tol: float = 1e-9) -> list[int]:
    """
    Индексы узлов сетки, охватывающих оценку.

    Внутри сетки - два соседних узла; при совпадении с узлом - узел и оба соседа;
    вне сетки - два ближайших узла.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return []
    order = np.argsort(values, kind="stable")
    ordered = values[order]
    exact = np.flatnonzero(np.isclose(ordered, estimate, rtol=rel_tol, atol=1e-12))
    if exact.size:
        position = int(exact[0])
        chosen = range(max(0, position - 1), min(len(ordered), position + 2))
    elif estimate < ordered[0]:
        chosen = range(0, min(2, len(ordered)))
    elif estimate > ordered[-1]:
        chosen = range(max(0, len(ordered) - 2), len(ordered))
    else:
        upper = int(np.searchsorted(ordered, estimate))
        chosen = (upper - 1, upper)
    return sorted(int(order[i]) for i in chosen)


def bracket_circular(values_deg, estimate_deg: float) -> list[int]:
    """Охват оценки на окружности 0…360° (345° между {315, 0} даёт оба узла)"""
    values = np.mod(np.asarray(values_deg, dtype=np.float64), 360.0)
    if values.size <= 2:
        return list(range(values.size))
    estimate = estimate_deg % 360.0
    order = np.argsort(values, kind="stable")
    ordered = values[order]
    n = len(ordered)
    exact = np.flatnonzero(np.isclose(ordered, estimate, atol=1e-9))
    if exact.size:
        position = int(exact[0])
        chosen = {(position - 1) % n, position, (position + 1) % n}
    else:
        upper = int(np.searchsorted(ordered, estimate)) % n
        chosen = {(upper - 1) % n, upper}
    return sorted(int(order[i]) for i in chosen)


def rf_cover_indices(values, rf_range: tuple[float, float]) -> list[int]:
    """Узлы R_f внутри диапазона и по одному ближайшему узлу снизу и сверху"""
    values = np.asarray(values, dtype=np.float64)
    low, high = rf_range
    inside = np.flatnonzero((values >= low) & (values <= high))
    below = np.flatnonzero(values < low)
    above = np.flatnonzero(values > high)
    chosen = set(inside.tolist())
    if below.size:
        chosen.add(int(below[np.argmax(values[below])]))
    if above.size:
        chosen.add(int(above[np.argmin(values[above])]))
    return sorted(chosen)


def select_axes(sweep: SweepConfig, estimate: ParameterEstimate, fia_lag_deg: float = 9.0) -> TargetSelection:
    """
    Подсетка полной группы под оценку параметров.

    Сопротивления систем упорядочены по модулю, воздушная и нулевая моды охватываются
    отдельно; без оценки нулевой моды берутся все её значения. УВК охватывается
    со сдвигом fia_lag_deg на запаздывание обнаружения. Ось места КЗ берётся целиком.

    Raises:
        SelectionError: Пустая подсетка по какой-либо оси
    """
    fault_type = estimate.fault_type
    axes = sweep.axes(fault_type)
    sources = axes["source_sets"]

    aerial_values = sorted({s.z_aerial for s in sources}, key=abs)
    zero_values = sorted({s.z_zero for s in sources}, key=abs)
    aerial_kept = {aerial_values[i] for i in bracket_indices([abs(z) for z in aerial_values], abs(estimate.Zs_aerial))}
    if estimate.Zs_zero is None:
        zero_kept = set(zero_values)
    else:
        zero_kept = {zero_values[i] for i in bracket_indices([abs(z) for z in zero_values], abs(estimate.Zs_zero))}

    selection = {
        "source_sets": [i for i, s in enumerate(sources) if s.z_aerial in aerial_kept and s.z_zero in zero_kept],
        "loading_deg": bracket_indices(axes["loading_deg"], estimate.loading_deg),
        "rf_ohm": rf_cover_indices(axes["rf_ohm"], estimate.rf_range),
        "lf_km": list(range(len(axes["lf_km"]))),
        "fia_deg": bracket_circular(axes["fia_deg"], estimate.fia_deg - fia_lag_deg),
    }
    empty = [name for name, chosen in selection.items() if not chosen]
    if empty:
        diagnostics = {
            "empty_axes": empty,
            "Zs_aerial": [estimate.Zs_aerial.real, estimate.Zs_aerial.imag],
            "nearest_source_sets": [[s.z_aerial.real, s.z_aerial.imag] for s in sources[:3]],
            "loading_deg": estimate.loading_deg,
            "loading_grid": axes["loading_deg"],
            "rf_range": list(estimate.rf_range),
            "rf_grid": axes["rf_ohm"],
        }
        raise SelectionError(f"Пустая подсетка по осям {empty}", diagnostics=diagnostics)

    return TargetSelection(
        fault_type=fault_type,
        source_set_indices=selection["source_sets"],
        loading_indices=selection["loading_deg"],
        rf_indices=selection["rf_ohm"],
        lf_indices=selection["lf_km"],
        fia_indices=selection["fia_deg"],
        source_sets=[sources[i] for i in selection["source_sets"]],
        loading_deg=[axes["loading_deg"][i] for i in selection["loading_deg"]],
        rf_ohm=[axes["rf_ohm"][i] for i in selection["rf_ohm"]],
        lf_km=list(axes["lf_km"]),
        fia_deg=[axes["fia_deg"][i] for i in selection["fia_deg"]],
    )


@dataclass
class TargetDataset:
    """Потоковый доступ к записям группы, отобранным по плоским индексам сетки."""

    manifest: DataGroupManifest
    root: Path
    fault_type: FaultType
    spec_indices: np.ndarray
    selection: TargetSelection | None = None
    storage: ShardStorage = field(default_factory=ShardStorage)

    @property
    def size(self) -> int:
        """Число отобранных узлов сетки (карантинные события отсутствуют в шардах)"""
        return int(self.spec_indices.size)

    def iterate(self) -> Iterator[np.ndarray]:
        """Записи шардов, попавшие в выборку, по одному шарду"""
        group = self.manifest.group(self.fault_type)
        if group is None or not self.spec_indices.size:
            return
        low, high = int(self.spec_indices[0]), int(self.spec_indices[-1])
        for shard in group.shards:
            if shard.last_index < low or shard.first_index > high:
                continue
            records = self.storage.read(self.root / shard.file)
            mask = np.isin(records["spec_index"], self.spec_indices, assume_unique=False)
            if mask.any():
                yield records[mask]

    def load_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(окна (n, 81, 6), метки км, плоские индексы)"""
        parts = list(self.iterate())
        if not parts:
            records = np.empty(0, dtype=ShardStorage.RECORD_DTYPE)
        else:
            records = np.concatenate(parts)
        return records["data"], records["label"], records["spec_index"]


def select_target(manifest: DataGroupManifest, estimate: ParameterEstimate, root: str | Path,
                  fia_lag_deg: float = 9.0) -> TargetDataset:
    """
    Целевая выборка: декартова подсетка группы вокруг оценок параметров.

    Raises:
        SelectionError: Группа не содержит вида КЗ оценки или подсетка пуста
    """
    if manifest.group(estimate.fault_type) is None:
        raise SelectionError(
            f"В группе нет КЗ вида {estimate.fault_type.value}",
            diagnostics={"available": [g.fault_type.value for g in manifest.groups]},
        )
    selection = select_axes(manifest.sweep, estimate, fia_lag_deg=fia_lag_deg)
    indices = np.array(
        manifest.sweep.indices(estimate.fault_type, selection.as_axes_selection()), dtype=np.int64
    )
    logger.info(
        f"Целевая выборка {estimate.fault_type.value}: {selection.size} узлов "
        f"(источники {len(selection.source_sets)}, нагрузка {selection.loading_deg}, "
        f"R_f {selection.rf_ohm}, УВК {selection.fia_deg})"
    )
    return TargetDataset(manifest=manifest, root=Path(root), fault_type=estimate.fault_type,
                         spec_indices=np.sort(indices), selection=selection)


def full_dataset(manifest: DataGroupManifest, fault_type: FaultType, root: str | Path) -> TargetDataset:
    """Вся группа одного вида КЗ (обучение без отбора)"""
    fault_type = FaultType(fault_type).canonical
    group = manifest.group(fault_type)
    if group is None:
        raise SelectionError(f"В группе нет КЗ вида {fault_type.value}")
    indices = np.arange(manifest.sweep.cardinality(fault_type), dtype=np.int64)
    return TargetDataset(manifest=manifest, root=Path(root), fault_type=fault_type, spec_indices=indices)


class SampleSet(NamedTuple):
    X: np.ndarray
    y: np.ndarray


def split_train_val(X: np.ndarray, y: np.ndarray, fraction: float = 0.8,
                    seed: int = 0) -> tuple[SampleSet, SampleSet]:
    """
    Детерминированное разбиение на обучающую и проверочную части.

    Raises:
        DatasetTooSmallError: Меньше 10 записей или одна из частей пуста
    """
    n = len(X)
    if n != len(y):
        raise DatasetTooSmallError(f"Число окон {n} не равно числу меток {len(y)}")
    if n < MIN_DATASET_SIZE:
        raise DatasetTooSmallError(f"В выборке {n} записей, нужно не менее {MIN_DATASET_SIZE}")
    n_train = int(round(fraction * n))
    if not 0 < n_train < n:
        raise DatasetTooSmallError(f"Доля {fraction} оставляет пустую часть выборки из {n} записей")
    X_train, X_val, y_train, y_val = train_test_split(
        X, y, train_size=n_train, test_size=n - n_train, random_state=seed, shuffle=True
    )
    return SampleSet(X_train, y_train), SampleSet(X_val, y_val)
