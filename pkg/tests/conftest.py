import math

import numpy as np
import pytest

from config import configure_settings
from models import presets
from models.dataset import SourceSet, SweepConfig
from models.estimation import ParameterEstimate
from models.records import FaultType, WaveformRecord


@pytest.fixture(autouse=True)
def default_settings():
    """Каждый тест начинается с настроек по умолчанию (без TOML и переопределений)"""
    settings = configure_settings()
    yield settings
    configure_settings()


@pytest.fixture
def make_record():
    """Фикстура для синтетической записи: симметричная система, ступенька тока фазы A в fault_index"""
    def _make_record(n_cycles: int = 4, samples_per_cycle: int = 80, frequency: float = 50.0,
                     voltage_peak: float = 400e3, current_peak: float = 1e3, fault_index: int | None = None,
                     fault_step: float = 5e3, trigger_index: int | None = None) -> WaveformRecord:
        n = n_cycles * samples_per_cycle
        sample_rate = samples_per_cycle * frequency
        t = np.arange(n) / sample_rate
        theta = 2.0 * math.pi * frequency * t
        shifts = (0.0, -2.0 * math.pi / 3.0, 2.0 * math.pi / 3.0)
        voltages = [voltage_peak * np.sin(theta + s) for s in shifts]
        currents = [current_peak * np.sin(theta + s - 0.3) for s in shifts]
        if fault_index is not None:
            currents[0] = currents[0] + np.where(np.arange(n) >= fault_index, fault_step, 0.0)
        return WaveformRecord(
            station_id="test", base_frequency=frequency, sample_rate=sample_rate, t=t,
            va=voltages[0], vb=voltages[1], vc=voltages[2],
            ia=currents[0], ib=currents[1], ic=currents[2],
            trigger_index=trigger_index,
        )
    return _make_record


@pytest.fixture
def make_estimate():
    """Фикстура для оценки параметров с возможностью переопределения полей (по умолчанию эталонный случай)"""
    def _make_estimate(overrides: dict | None = None) -> ParameterEstimate:
        values = dict(
            fault_type=FaultType.AG, mode="alpha",
            Zs_aerial=2.3977 + 6.6901j, Zs_zero=4.1004 + 12.3902j,
            loading_deg=11.9211, fia_deg=67.5, rf_range=(0.0, 7.7),
            t_f_index=161, t_0_index=146.0, meas_peak_a=14.63e3, i1_0=500.0,
            u_s1=280e3 + 0j, u_s2=275e3 - 58e3j,
        )
        if overrides:
            values.update(overrides)
        return ParameterEstimate(**values)
    return _make_estimate


@pytest.fixture
def reference_line():
    return presets.reference_line()


@pytest.fixture
def tiny_sweep(reference_line) -> SweepConfig:
    """Сетка на 12 событий AG с грубой схемой для быстрых прогонов"""
    return SweepConfig(
        line=reference_line, voltage_kv=500.0, fault_types=[FaultType.AG],
        source_sets=[SourceSet(z_aerial=2 + 8j, z_zero=3 + 15j)],
        loading_deg=[10.0], rf_ohm=[1.0, 5.0], lf_km=[50.0, 100.0, 150.0], fia_deg=[45.0, 90.0],
        n_pi_sections=2, dt_sim=50e-6,
    )
