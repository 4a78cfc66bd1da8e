"""
Метод Такаги: одностороннее определение расстояния по фазорам контура КЗ
и аварийной составляющей тока.

    x = Im(V · ΔI*) / Im(z1 · I · ΔI*)

Контур: фаза-земля с компенсацией нулевой последовательности для однофазных КЗ,
междуфазный контур B-C для остальных видов (после поворота фаз к каноническому виду).
"""

import logging
import math
from typing import NamedTuple

import numpy as np

from models.line import LineParameters
from models.records import FaultType, WaveformRecord
from models.report import TakagiPoint
from services.exceptions import FaultLocationError, TakagiIndeterminateError
from services.records import resample
from services.signals import (
    PREFAULT_GUARD,
    default_prefault_end,
    detect_fault_initiation,
    extract_phasor,
    record_modes,
    rotate_phases,
)

logger = logging.getLogger(__name__)

DENOMINATOR_TOLERANCE = 1e-9


class LoopPhasors(NamedTuple):
    voltage: complex
    current: complex
    pure_fault_current: complex


def loop_name(fault_type: FaultType) -> str:
    if FaultType(fault_type).canonical is FaultType.AG:
        return "A-G с компенсацией нулевой последовательности"
    return "B-C"


def _phasors(record: WaveformRecord, end: float, n_cycle: int) -> dict[str, complex]:
    return {name: extract_phasor(record.channel(name), end, n_cycle).complex
            for name in ("va", "vb", "vc", "ia", "ib", "ic")}


def loop_phasors(record: WaveformRecord, fault_type: FaultType, line: LineParameters, t_f: int,
                 end: int, samples_per_cycle: int) -> LoopPhasors:
    """Фазоры контура в окне, оканчивающемся на end; доаварийный фазор доворачивается к end"""
    fault = _phasors(record, end, samples_per_cycle)
    pre_end = t_f - PREFAULT_GUARD
    pre = _phasors(record, pre_end, samples_per_cycle)
    shift = np.exp(2j * math.pi * (end - pre_end) / samples_per_cycle)
    delta = {name: fault[name] - pre[name] * shift for name in ("ia", "ib", "ic")}

    if FaultType(fault_type).canonical is FaultType.AG:
        frequency = record.base_frequency
        z1 = line.z_aerial_km(frequency)
        k0 = (line.z_zero_km(frequency) - z1) / (3.0 * z1)
        residual = fault["ia"] + fault["ib"] + fault["ic"]
        return LoopPhasors(fault["va"], fault["ia"] + k0 * residual, delta["ia"])
    return LoopPhasors(fault["vb"] - fault["vc"], fault["ib"] - fault["ic"], delta["ib"] - delta["ic"])


def takagi_distance(phasors: LoopPhasors, z1_km: complex) -> float:
    """
    Raises:
        TakagiIndeterminateError: Знаменатель формулы близок к нулю
    """
    conj_delta = np.conj(phasors.pure_fault_current)
    numerator = (phasors.voltage * conj_delta).imag
    denominator = (z1_km * phasors.current * conj_delta).imag
    scale = abs(z1_km) * abs(phasors.current) * abs(phasors.pure_fault_current)
    if scale == 0 or abs(denominator) < DENOMINATOR_TOLERANCE * scale:
        raise TakagiIndeterminateError(f"Вырожденный знаменатель метода Такаги: {denominator:.3e}")
    return float(numerator / denominator)


def _prepare(record: WaveformRecord, fault_type: FaultType | str, samples_per_cycle: int,
             t_f: int | None, k_ff: float) -> tuple[WaveformRecord, FaultType, int]:
    rotation = rotate_phases(record, fault_type)
    rotated = rotation.record
    if rotated.samples_per_cycle != samples_per_cycle:
        rotated = resample(rotated, samples_per_cycle)
    if t_f is None:
        _, currents = record_modes(rotated)
        t_f = detect_fault_initiation(currents, default_prefault_end(samples_per_cycle), k_ff=k_ff)
    if t_f - PREFAULT_GUARD - samples_per_cycle + 1 < 0:
        raise TakagiIndeterminateError(f"Нет полного доаварийного периода до отсчёта {t_f}")
    return rotated, rotation.canonical, t_f


def takagi_locate(record: WaveformRecord, line: LineParameters, fault_type: FaultType | str,
                  eval_time_ms: float, *, samples_per_cycle: int = 80, t_f: int | None = None,
                  k_ff: float = 1.5) -> float:
    """
    Расстояние, км, по окну длиной в период, оканчивающемуся через eval_time_ms после КЗ.

    Raises:
        TakagiIndeterminateError: Вырожденный знаменатель или нет доаварийного периода
        PhasorWindowError: Окно выходит за пределы записи
    """
    if eval_time_ms < 0:
        raise TakagiIndeterminateError(f"Момент оценки должен быть ≥ 0, получено {eval_time_ms} мс")
    rotated, canonical, t_f = _prepare(record, fault_type, samples_per_cycle, t_f, k_ff)
    end = t_f + int(round(eval_time_ms * 1e-3 * rotated.sample_rate))
    phasors = loop_phasors(rotated, canonical, line, t_f, end, samples_per_cycle)
    distance = takagi_distance(phasors, line.z_aerial_km(rotated.base_frequency))
    logger.debug(f"Такаги, {eval_time_ms:g} мс после КЗ: {distance:.3f} км")
    return distance


def takagi_timeline(record: WaveformRecord, line: LineParameters, fault_type: FaultType | str, *,
                    samples_per_cycle: int = 80, t_f: int | None = None, k_ff: float = 1.5) -> list[TakagiPoint]:
    """Оценки по всем окнам, оканчивающимся на послеаварийных отсчётах записи"""
    rotated, canonical, t_f = _prepare(record, fault_type, samples_per_cycle, t_f, k_ff)
    z1 = line.z_aerial_km(rotated.base_frequency)
    timeline = []
    for end in range(t_f, rotated.n_samples):
        time_ms = 1e3 * (end - t_f) / rotated.sample_rate
        try:
            distance = takagi_distance(loop_phasors(rotated, canonical, line, t_f, end, samples_per_cycle), z1)
        except FaultLocationError:
            distance = None
        timeline.append(TakagiPoint(time_ms=time_ms, distance_km=distance))
    return timeline
