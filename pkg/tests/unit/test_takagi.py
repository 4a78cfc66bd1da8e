import cmath

import numpy as np
import pytest

from models.records import FaultType
from services.exceptions import TakagiIndeterminateError
from services.takagi import LoopPhasors, loop_name, takagi_distance, takagi_locate, takagi_timeline

Z1_KM = 0.03 + 0.3j


def _loop(distance_km: float, resistance: float) -> LoopPhasors:
    """Контур с чисто активным сопротивлением в месте КЗ, ток КЗ синфазен аварийной составляющей"""
    current = 1000.0 * cmath.exp(-0.5j)
    pure_fault_current = 3000.0 * cmath.exp(-1.2j)
    voltage = distance_km * Z1_KM * current + resistance * 1.5 * pure_fault_current
    return LoopPhasors(voltage, current, pure_fault_current)


@pytest.mark.parametrize("distance_km, resistance", [(50.0, 0.0), (50.0, 3.0), (12.5, 40.0)])
def test_takagi_distance_cancels_fault_resistance(distance_km, resistance):
    assert takagi_distance(_loop(distance_km, resistance), Z1_KM) == pytest.approx(distance_km)


def test_takagi_distance_degenerate_denominator():
    phasors = LoopPhasors(1000.0 + 0j, 100.0 + 0j, 0j)

    with pytest.raises(TakagiIndeterminateError):
        takagi_distance(phasors, Z1_KM)


@pytest.mark.parametrize(
    "fault_type, expected",
    [(FaultType.CG, "A-G с компенсацией нулевой последовательности"), (FaultType.AB, "B-C"), (FaultType.ABC, "B-C")],
)
def test_loop_name(fault_type, expected):
    assert loop_name(fault_type) == expected


def test_takagi_locate_rejects_negative_time(make_record, reference_line):
    with pytest.raises(TakagiIndeterminateError):
        takagi_locate(make_record(fault_index=200), reference_line, FaultType.AG, -1.0, t_f=200)


def test_takagi_locate_needs_prefault_cycle(make_record, reference_line):
    with pytest.raises(TakagiIndeterminateError):
        takagi_locate(make_record(fault_index=200), reference_line, FaultType.AG, 10.0, t_f=50)


def test_takagi_timeline_covers_postfault_samples(make_record, reference_line):
    timeline = takagi_timeline(make_record(fault_index=200), reference_line, FaultType.AG, t_f=200)

    assert len(timeline) == 120
    assert timeline[0].time_ms == 0.0
    assert timeline[-1].time_ms == pytest.approx(29.75)
    assert all(point.distance_km is None or np.isfinite(point.distance_km) for point in timeline)
