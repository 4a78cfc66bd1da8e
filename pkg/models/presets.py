"""
Эталонные системы и сетки: линия 500 кВ 200 км, полная и уменьшенная группы,
испытательные события, две полевые линии 220 кВ с эмуляцией зарегистрированных КЗ.
"""

from itertools import product

import numpy as np

from models.dataset import EventSpec, SourceSet, SweepConfig
from models.line import LineParameters, SourceImpedance
from models.records import CANONICAL_TYPES, FaultType

FREQUENCY = 50.0
FIA_GRID = [0.0, 45.0, 90.0, 135.0, 180.0, 225.0, 270.0, 315.0]
LOADING_GRID = [-12.0, -10.0, -6.0, -2.0, 2.0, 6.0, 10.0, 12.0]

# Эталонная система
REFERENCE_VOLTAGE_KV = 500.0
RF_LOW = [0.5, 2.5, 4.5, 6.5, 8.5, 15.0, 35.0]
RF_HIGH = [50.0, 100.0, 200.0, 300.0]
AERIAL_SOURCES = [1 + 5j, 2 + 8j, 5 + 10j]
ZERO_SOURCES = [3 + 15j, 5 + 10j, 7 + 15j]

# Испытательные события
TEST_SOURCE_LOCAL = (2.4 + 6.6j, 4.1 + 12.3j)
TEST_SOURCE_REMOTE = (2.9 + 7j, 5.2 + 16.4j)
TEST_LOADING_DEG = 12.0
TEST_FIA_DEG = 67.5
TEST_RF_LOW = [0.1, 1.0, 3.0, 7.0]
TEST_RF_HIGH = [40.0, 80.0, 160.0, 320.0]
TEST_LF_KM = [25.0, 50.0, 75.0, 100.0, 125.0, 150.0, 175.0]

# Полевые линии
FIELD_VOLTAGE_KV = 220.0
FIELD_AERIAL_SOURCES = [0.1 + 1j, 0.4 + 1.5j, 1 + 5j]
FIELD_ZERO_SOURCES = [0.2 + 1.5j, 0.8 + 3j, 2 + 6j]
FIELD_RF = [0.01, 0.1, 0.2, 0.5, 1.0, 10.0, 20.0, 50.0, 100.0, 150.0, 200.0]


def reference_line() -> LineParameters:
    return LineParameters.from_phase(
        length_km=200.0, Rs_km=0.106, Rm_km=0.091, Ls_km=0.0016, Lm_km=0.0008,
        Cs_km=0.129e-7, Cm_km=-0.025e-7, rated_kv=REFERENCE_VOLTAGE_KV,
    )


def _source_sets(aerial: list[complex], zero: list[complex]) -> list[SourceSet]:
    return [SourceSet(z_aerial=a, z_zero=z) for a, z in product(aerial, zero)]


def full_simulation_sweep(fault_types: list[FaultType] | None = None) -> SweepConfig:
    """Полная группа эталонной системы (только для оценки объёма, 1 260 864 событий AG)"""
    return SweepConfig(
        line=reference_line(), voltage_kv=REFERENCE_VOLTAGE_KV, frequency=FREQUENCY,
        fault_types=fault_types or [FaultType.AG],
        source_sets=_source_sets(AERIAL_SOURCES, ZERO_SOURCES),
        loading_deg=LOADING_GRID, rf_ohm=RF_LOW, rf_high_ohm=RF_HIGH,
        lf_km=[float(x) for x in range(1, 200)], fia_deg=FIA_GRID,
    )


def desk_sweep(fault_types: list[FaultType] | None = None) -> SweepConfig:
    """Уменьшенная группа: 2 набора источников × 4 угла нагрузки × 7 R_f × 40 мест × 8 УВК"""
    return SweepConfig(
        line=reference_line(), voltage_kv=REFERENCE_VOLTAGE_KV, frequency=FREQUENCY,
        fault_types=fault_types or list(CANONICAL_TYPES),
        source_sets=[SourceSet(z_aerial=1 + 5j, z_zero=5 + 10j), SourceSet(z_aerial=2 + 8j, z_zero=3 + 15j)],
        loading_deg=[2.0, 6.0, 10.0, 12.0], rf_ohm=RF_LOW,
        lf_km=[float(x) for x in np.arange(2.5, 200.0, 5.0)], fia_deg=FIA_GRID,
    )


def evaluation_source_impedances() -> tuple[SourceImpedance, SourceImpedance]:
    return (SourceImpedance.from_complex(*TEST_SOURCE_LOCAL, FREQUENCY),
            SourceImpedance.from_complex(*TEST_SOURCE_REMOTE, FREQUENCY))


def evaluation_event(fault_type: FaultType, l_f: float, R_f: float, **overrides) -> EventSpec:
    """Событие испытательной выборки эталонной системы"""
    local, remote = evaluation_source_impedances()
    values = dict(
        fault_type=fault_type, l_f=l_f, R_f=R_f, fia_deg=TEST_FIA_DEG, loading_deg=TEST_LOADING_DEG,
        Zs_local=local, Zs_remote=remote, line=reference_line(), voltage_kv=REFERENCE_VOLTAGE_KV,
        frequency=FREQUENCY,
    )
    values.update(overrides)
    return EventSpec(**values)


def evaluation_events(fault_type: FaultType, include_high_resistance: bool = True) -> list[EventSpec]:
    """Все события испытательной сетки; высокоомные только для однофазных КЗ"""
    resistances = list(TEST_RF_LOW)
    if include_high_resistance and FaultType(fault_type).canonical is FaultType.AG:
        resistances += TEST_RF_HIGH
    return [evaluation_event(fault_type, l_f, R_f) for R_f, l_f in product(resistances, TEST_LF_KM)]


def field_case_line(case: int) -> LineParameters:
    """Линии 220 кВ полевых случаев (последовательностные параметры)"""
    if case == 1:
        return LineParameters.from_sequence(
            length_km=22.60, R0_km=0.1724, R1_km=0.0400, L0_km=0.00227, L1_km=9.548e-4,
            C0_km=1.225e-8, C1_km=1.198e-8, rated_kv=FIELD_VOLTAGE_KV,
        )
    if case == 2:
        return LineParameters.from_sequence(
            length_km=23.55, R0_km=0.1469, R1_km=0.0367, L0_km=0.0024, L1_km=0.0010,
            C0_km=5.7156e-9, C1_km=1.3717e-8, rated_kv=FIELD_VOLTAGE_KV,
        )
    raise ValueError(f"Неизвестный полевой случай: {case}")


def field_sweep(line: LineParameters, fault_types: list[FaultType] | None = None,
                lf_step_km: float = 1.0) -> SweepConfig:
    """Полная группа полевой линии: места КЗ 1, 2, … до длины линии"""
    return SweepConfig(
        line=line, voltage_kv=FIELD_VOLTAGE_KV, frequency=FREQUENCY,
        fault_types=fault_types or [FaultType.AG],
        source_sets=_source_sets(FIELD_AERIAL_SOURCES, FIELD_ZERO_SOURCES),
        loading_deg=LOADING_GRID, rf_ohm=FIELD_RF,
        lf_km=[float(x) for x in np.arange(lf_step_km, line.length_km, lf_step_km)], fia_deg=FIA_GRID,
    )


def field_case_event(case: int, R_f: float = 1.0, **overrides) -> EventSpec:
    """
    Эмуляция полевого КЗ: система с оценёнными по записи сопротивлениями,
    углом нагрузки и УВК. Случай 1 - C-G на 11.9 км, 4 кГц; случай 2 - A-G на 1.8 км, 5 кГц.
    """
    line = field_case_line(case)
    if case == 1:
        source = SourceImpedance.from_complex(1.2678 + 6.7522j, 1.5215 + 11.3984j, FREQUENCY)
        values = dict(fault_type=FaultType.CG, l_f=11.9, fia_deg=57.6, loading_deg=1.9916, samples_per_cycle=80)
    else:
        source = SourceImpedance.from_complex(0.2881 + 0.8813j, 0.1255 + 1.0429j, FREQUENCY)
        values = dict(fault_type=FaultType.AG, l_f=1.8, fia_deg=97.2, loading_deg=2.7417, samples_per_cycle=100)
    values.update(R_f=R_f, Zs_local=source, Zs_remote=source, line=line, voltage_kv=FIELD_VOLTAGE_KV,
                  frequency=FREQUENCY)
    values.update(overrides)
    return EventSpec(**values)
