"""
Модальные преобразования и обработка сигналов: Кларк, производная, момент КЗ,
переход через ноль, фазор полного периода, поворот фаз.
"""
import logging
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from models.records import FaultType, WaveformRecord
from services.exceptions import (
    InputDataError,
    NoFaultDetectedError,
    PhasorWindowError,
    SignalLengthError,
    UnknownFaultTypeError,
    ZeroCrossingNotFoundError,
)

logger = logging.getLogger(__name__)

SQRT3 = math.sqrt(3.0)
CLARKE_INVERSE = np.array([
    [2.0 / 3.0, -1.0 / 3.0, -1.0 / 3.0],
    [0.0, 1.0 / SQRT3, -1.0 / SQRT3],
    [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
])
CLARKE = np.array([
    [1.0, 0.0, 1.0],
    [-0.5, SQRT3 / 2.0, 1.0],
    [-0.5, -SQRT3 / 2.0, 1.0],
])
MODES = ("alpha", "beta", "zero")
# Отступ конца эталонного доаварийного периода от prefault_end
PREFAULT_GUARD = 2


@dataclass(frozen=True)
class ModeWaveforms:
    alpha: np.ndarray
    beta: np.ndarray
    zero: np.ndarray
    sample_rate: float | None = None
    base_frequency: float | None = None

    def mode(self, name: str) -> np.ndarray:
        return getattr(self, name)

    def stacked(self) -> np.ndarray:
        return np.vstack([self.alpha, self.beta, self.zero])

    @property
    def samples_per_cycle(self) -> float:
        return self.sample_rate / self.base_frequency


@dataclass(frozen=True)
class Phasor:
    """Действующее значение и угол (рад, в (−π, π])"""
    magnitude: float
    angle: float

    @classmethod
    def from_complex(cls, value: complex) -> "Phasor":
        angle = math.atan2(value.imag, value.real)
        if angle <= -math.pi:
            angle = math.pi
        return cls(magnitude=abs(value), angle=angle)

    @property
    def complex(self) -> complex:
        return self.magnitude * complex(math.cos(self.angle), math.sin(self.angle))

    def rotated(self, radians: float) -> "Phasor":
        return Phasor.from_complex(self.complex * complex(math.cos(radians), math.sin(radians)))


class PhaseRotation(NamedTuple):
    record: WaveformRecord
    canonical: FaultType
    permutation: tuple[int, int, int]


def clarke_forward(a, b, c, sample_rate: float | None = None,
                   base_frequency: float | None = None) -> ModeWaveforms:
    """[α β 0]ᵀ = T⁻¹ [A B C]ᵀ для каждого отсчёта"""
    a, b, c = (np.asarray(x, dtype=np.float64) for x in (a, b, c))
    if not (a.shape == b.shape == c.shape):
        raise SignalLengthError(f"Длины фаз не совпадают: {a.shape}, {b.shape}, {c.shape}")
    modes = CLARKE_INVERSE @ np.vstack([a, b, c])
    return ModeWaveforms(modes[0], modes[1], modes[2], sample_rate, base_frequency)


def clarke_inverse(modes: ModeWaveforms) -> np.ndarray:
    """Фазные величины (3, N) из модальных"""
    return CLARKE @ modes.stacked()


def clarke_matrix_transform(matrix_abc: np.ndarray) -> np.ndarray:
    """T⁻¹ · M · T для 3×3 матрицы"""
    matrix_abc = np.asarray(matrix_abc, dtype=np.float64)
    if matrix_abc.shape != (3, 3):
        raise InputDataError(f"Ожидалась матрица 3×3, получено {matrix_abc.shape}")
    return CLARKE_INVERSE @ matrix_abc @ CLARKE


def record_modes(record: WaveformRecord) -> tuple[ModeWaveforms, ModeWaveforms]:
    """Модальные напряжения и токи записи"""
    meta = dict(sample_rate=record.sample_rate, base_frequency=record.base_frequency)
    voltages = clarke_forward(record.va, record.vb, record.vc, **meta)
    currents = clarke_forward(record.ia, record.ib, record.ic, **meta)
    return voltages, currents


def central_difference(x, dt: float) -> np.ndarray:
    """Центральная разность внутри, односторонние разности первого порядка на концах"""
    x = np.asarray(x, dtype=np.float64)
    if x.size < 3:
        raise SignalLengthError(f"Для производной нужно ≥3 отсчётов, получено {x.size}")
    return np.gradient(x, dt, edge_order=1)


def default_prefault_end(samples_per_cycle: int) -> int:
    """prefault_end, при котором эталоном служит первый период записи (без крайнего отсчёта)"""
    return samples_per_cycle + PREFAULT_GUARD + 1


def detect_fault_initiation(mode_current: ModeWaveforms, prefault_end: int, k_ff: float = 1.5,
                            noise_floor_ratio: float = 0.01) -> int:
    """
    Найти первый отсчёт, где |di/dt| превышает k_ff · max|di/dt| доаварийного периода.

    Эталонный период заканчивается за два отсчёта до prefault_end. Порог каждой моды
    ограничен снизу долей noise_floor_ratio от наибольшего доаварийного максимума
    среди мод, иначе численный шум почти нулевой моды даёт ложный пуск.
    Просматриваются все три моды, возвращается самый ранний пуск.

    Raises:
        InputDataError: Недостаточно доаварийных данных
        NoFaultDetectedError: Порог не превышен ни в одной моде
    """
    n_cycle = int(round(mode_current.samples_per_cycle))
    reference_end = prefault_end - PREFAULT_GUARD
    reference_start = reference_end - n_cycle
    if reference_start < 1:
        raise InputDataError(
            f"Недостаточно доаварийных данных: нужен период до отсчёта {prefault_end}, не хватает "
            f"{1 - reference_start} отсчётов"
        )
    dt = 1.0 / mode_current.sample_rate
    derivatives = {name: np.abs(central_difference(mode_current.mode(name), dt)) for name in MODES}
    reference = {name: float(np.max(d[reference_start:reference_end])) for name, d in derivatives.items()}
    floor = noise_floor_ratio * max(reference.values())

    earliest: int | None = None
    for name, derivative in derivatives.items():
        threshold = k_ff * max(reference[name], floor)
        # последний отсчёт не рассматривается
        candidates = np.flatnonzero(derivative[reference_end:len(derivative) - 1] > threshold)
        if candidates.size:
            index = reference_end + int(candidates[0])
            logger.debug(f"Мода {name}: порог {threshold:.4g}, пуск на отсчёте {index}")
            if earliest is None or index < earliest:
                earliest = index
    if earliest is None:
        raise NoFaultDetectedError("Момент возникновения КЗ не обнаружен ни в одной моде")
    return earliest


def last_rising_zero_crossing(u, before: float, samples_per_cycle: int | None = None) -> float:
    """
    Последний переход через ноль снизу вверх с дробным индексом < before.

    Raises:
        InputDataError: Меньше периода данных до before
        ZeroCrossingNotFoundError: Перехода нет
    """
    u = np.asarray(u, dtype=np.float64)
    if samples_per_cycle is not None and before < samples_per_cycle:
        raise InputDataError(f"До отсчёта {before} меньше периода данных")
    last = min(int(math.ceil(before)), len(u) - 1)
    for k in range(last - 1, -1, -1):
        lower, upper = u[k], u[k + 1]
        if lower < 0.0 <= upper:
            crossing = k + (-lower) / (upper - lower)
            if crossing < before:
                return float(crossing)
    raise ZeroCrossingNotFoundError(f"Нет перехода через ноль снизу вверх до отсчёта {before}")


def extract_phasor(x, end: float, samples_per_cycle: int) -> Phasor:
    """
    ДПФ полного периода на основной частоте, окно [end − T, end], угол отнесён к end.

    Raises:
        PhasorWindowError: Окно выходит за границы массива
    """
    x = np.asarray(x, dtype=np.float64)
    last = int(math.floor(end + 1e-9))
    first = last - samples_per_cycle + 1
    if first < 0 or last > len(x) - 1:
        raise PhasorWindowError(f"Окно фазора [{first}, {last}] вне массива длины {len(x)}")
    n = np.arange(first, last + 1)
    theta = 2.0 * math.pi * (n - end) / samples_per_cycle
    value = math.sqrt(2.0) / samples_per_cycle * np.sum(x[first:last + 1] * np.exp(-1j * theta))
    return Phasor.from_complex(complex(value))


def rotate_phases(record: WaveformRecord, fault_type: FaultType | str) -> PhaseRotation:
    """
    Циклически переставить фазы так, чтобы КЗ стало одним из AG, BC, BCG, ABC.

    Raises:
        UnknownFaultTypeError: Неизвестный вид КЗ
    """
    try:
        fault_type = FaultType(fault_type)
    except ValueError as e:
        raise UnknownFaultTypeError(f"Неизвестный вид КЗ: {fault_type}") from e
    permutation = fault_type.permutation
    if permutation == (0, 1, 2):
        return PhaseRotation(record, fault_type.canonical, permutation)
    voltages = [record.va, record.vb, record.vc]
    currents = [record.ia, record.ib, record.ic]
    rotated = record.replace(
        va=voltages[permutation[0]], vb=voltages[permutation[1]], vc=voltages[permutation[2]],
        ia=currents[permutation[0]], ib=currents[permutation[1]], ic=currents[permutation[2]],
    )
    logger.debug(f"Поворот фаз {fault_type.value} -> {fault_type.canonical.value}: {permutation}")
    return PhaseRotation(rotated, fault_type.canonical, permutation)


def aerial_mode(fault_type: FaultType) -> str:
    """Воздушная мода расчёта: α для однофазных КЗ, β для остальных"""
    return "alpha" if fault_type.canonical is FaultType.AG else "beta"


def fia_reference_mode(fault_type: FaultType) -> str:
    """Мода напряжения, по которой отсчитывается угол включения"""
    return "beta" if fault_type.canonical in (FaultType.BC, FaultType.BCG) else "alpha"
