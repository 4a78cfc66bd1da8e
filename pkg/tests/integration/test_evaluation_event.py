import math

import numpy as np
import pytest

from config import get_settings
from models import presets
from models.records import FaultType
from services.emt import simulate_event
from services.estimation import estimate_all, oracle_deviation, rf_grid_from_settings


@pytest.fixture(scope="module")
def evaluation_record():
    """Фикстура для КЗ A-G 1 Ом на 25 км эталонной системы (моделируется один раз на модуль)"""
    return simulate_event(presets.evaluation_event(FaultType.AG, 25.0, 1.0))


@pytest.fixture(scope="module")
def estimate(evaluation_record):
    return estimate_all(evaluation_record, FaultType.AG, presets.reference_line())


@pytest.mark.integration
class TestEvaluationEvent:
    def test_source_impedance(self, estimate):
        local = complex(2.4, 6.6)
        assert abs(estimate.Zs_aerial - local) <= 0.05 * abs(local)

    def test_zero_mode_source_impedance(self, estimate):
        zero = complex(4.1, 12.3)
        assert abs(estimate.Zs_zero - zero) <= 0.05 * abs(zero)

    def test_loading_angle(self, estimate):
        assert estimate.loading_deg == pytest.approx(12.0, abs=0.5)

    def test_fault_inception_angle(self, estimate):
        assert estimate.fia_deg == pytest.approx(67.5, abs=6.75)

    def test_peak_current(self, estimate):
        assert estimate.meas_peak_a == pytest.approx(14.63e3, rel=0.05)
        assert estimate.peak_scale == pytest.approx(math.sqrt(1.5))

    def test_resistance_range(self, estimate):
        low, high = estimate.rf_range
        assert low <= 1.0
        assert 5.0 <= high <= 15.0
        assert not estimate.rf_upper_clipped

    def test_fault_moment_follows_simulation(self, evaluation_record, estimate):
        assert abs(estimate.t_f_index - (evaluation_record.trigger_index + 1)) <= 2

    def test_analytic_model_matches_integration(self, estimate):
        assert oracle_deviation(estimate, presets.reference_line()) < 5e-3


@pytest.fixture(scope="module")
def high_resistance_estimate():
    """Фикстура для оценки по КЗ A-G 160 Ом на 25 км эталонной системы"""
    record = simulate_event(presets.evaluation_event(FaultType.AG, 25.0, 160.0))
    return estimate_all(record, FaultType.AG, presets.reference_line())


@pytest.mark.integration
class TestHighResistanceEvent:
    def test_resistance_range_covers_fault(self, high_resistance_estimate):
        low, high = high_resistance_estimate.rf_range

        assert 5.0 <= low <= 40.0
        assert high >= 160.0

    def test_clipped_upper_bound_is_flagged(self, high_resistance_estimate):
        grid_edge = float(rf_grid_from_settings(get_settings().estimation)[-1])

        high = high_resistance_estimate.rf_range[1]
        assert high_resistance_estimate.rf_upper_clipped == bool(np.isclose(high, grid_edge))
