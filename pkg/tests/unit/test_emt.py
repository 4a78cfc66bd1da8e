import math

import numpy as np
import pytest

from models import presets
from models.records import FaultType
from services.emt import (
    TransientNetwork,
    build_ladder,
    fault_conductance_stamp,
    simulate_event,
    source_phasors,
    steady_state_phasor_solve,
)
from services.exceptions import SimulationFailedError
from services.signals import extract_phasor


@pytest.fixture
def coarse_event():
    """Фикстура для события AG 5 Ом на 100 км с грубой схемой (два пи-звена с каждой стороны)"""
    return presets.evaluation_event(FaultType.AG, 100.0, 5.0, n_pi_sections=2, dt_sim=50e-6)


def test_ground_fault_stamp():
    stamp = fault_conductance_stamp(FaultType.AG, 2.0)

    expected = np.zeros((3, 3))
    expected[0, 0] = 0.5
    assert np.array_equal(stamp, expected)


def test_phase_to_phase_stamp():
    stamp = fault_conductance_stamp(FaultType.BC, 2.0)

    assert np.allclose(stamp, [[0.0, 0.0, 0.0], [0.0, 0.5, -0.5], [0.0, -0.5, 0.5]])


def test_double_ground_stamp_connects_both_phases_to_ground():
    stamp = fault_conductance_stamp(FaultType.BCG, 4.0)

    assert np.allclose(stamp, np.diag([0.0, 0.25, 0.25]))


def test_three_phase_stamp_is_delta():
    stamp = fault_conductance_stamp(FaultType.ABC, 2.0)

    assert np.allclose(np.diag(stamp), 1.0)
    assert np.allclose(stamp.sum(axis=1), 0.0)


def test_stamp_rejects_zero_resistance():
    with pytest.raises(SimulationFailedError):
        fault_conductance_stamp(FaultType.AG, 0.0)


def test_source_phasors_follow_loading_angle(coarse_event):
    phasors = source_phasors(coarse_event)

    assert phasors.shape == (2, 3)
    assert np.allclose(np.abs(phasors), 500e3 / math.sqrt(3.0))
    assert math.degrees(np.angle(phasors[1, 0] / phasors[0, 0])) == pytest.approx(coarse_event.loading_deg)


def test_build_ladder_places_fault_node_in_middle(coarse_event):
    network = build_ladder(coarse_event)

    assert network.n_nodes == 5
    assert network.fault_node == 2
    assert network.n_branches == 6
    assert network.C_nodes.sum() == pytest.approx(coarse_event.line.C_phase.sum() * 200.0)


def test_simulate_event_record_layout(coarse_event):
    record = simulate_event(coarse_event)

    assert record.sample_rate == pytest.approx(4000.0)
    assert record.trigger_index == 160
    assert record.n_samples == 241


def test_simulate_event_prefault_is_periodic(coarse_event):
    record = simulate_event(coarse_event)

    peak = np.max(np.abs(record.va[:160]))
    assert np.max(np.abs(record.va[80:160] - record.va[:80])) <= 1e-2 * peak
    assert extract_phasor(record.va, 159, 80).magnitude == pytest.approx(500e3 / math.sqrt(3.0), rel=0.1)


def test_simulate_event_fault_raises_phase_current(coarse_event):
    record = simulate_event(coarse_event)

    prefault = np.max(np.abs(record.ia[:161]))
    postfault = np.max(np.abs(record.ia[161:]))
    assert postfault > 2.0 * prefault
    assert np.max(np.abs(record.ib[161:])) < postfault


def test_simulate_event_divergence_guard(coarse_event):
    with pytest.raises(SimulationFailedError) as error:
        simulate_event(coarse_event, divergence_energy_ratio=1e-9)

    assert error.value.spec_echo["fault_type"] == "AG"


def _positive_sequence_voltages(spec) -> np.ndarray:
    """Узловые напряжения фазы A по однофазной схеме прямой последовательности"""
    n = spec.sections_per_side
    line = spec.line
    lengths = [spec.l_f / n] * n + [(line.length_km - spec.l_f) / n] * n
    Y = np.zeros((2 * n + 1, 2 * n + 1), dtype=complex)
    for k, length in enumerate(lengths):
        y_series = 1.0 / (line.z_aerial_km(spec.frequency) * length)
        Y[k:k + 2, k:k + 2] += y_series * np.array([[1.0, -1.0], [-1.0, 1.0]])
        Y[k, k] += line.y_aerial_km(spec.frequency) * length / 2.0
        Y[k + 1, k + 1] += line.y_aerial_km(spec.frequency) * length / 2.0
    emf = source_phasors(spec)[:, 0]
    y_local = 1.0 / spec.Zs_local.z_aerial(spec.frequency)
    y_remote = 1.0 / spec.Zs_remote.z_aerial(spec.frequency)
    Y[0, 0] += y_local
    Y[-1, -1] += y_remote
    injection = np.zeros(2 * n + 1, dtype=complex)
    injection[0] = emf[0] * y_local
    injection[-1] = emf[1] * y_remote
    return np.linalg.solve(Y, injection)


def test_steady_state_is_symmetric(coarse_event):
    V = steady_state_phasor_solve(coarse_event).node_voltages

    scale = np.max(np.abs(V))
    assert np.max(np.abs(V[:, 1] - V[:, 0] * np.exp(-2j * math.pi / 3.0))) <= 1e-9 * scale
    assert np.max(np.abs(V[:, 2] - V[:, 0] * np.exp(2j * math.pi / 3.0))) <= 1e-9 * scale


def test_steady_state_matches_positive_sequence_ladder(coarse_event):
    V = steady_state_phasor_solve(coarse_event).node_voltages

    expected = _positive_sequence_voltages(coarse_event)

    assert np.max(np.abs(V[:, 0] - expected)) <= 1e-9 * np.max(np.abs(expected))


def test_open_fault_continues_prefault_waveform(coarse_event):
    record = simulate_event(coarse_event.model_copy(update={"R_f": 1e9}))

    for signal in (record.va, record.ia):
        peak = np.max(np.abs(signal))
        assert np.max(np.abs(signal[161:241] - signal[81:161])) <= 1e-2 * peak


@pytest.mark.parametrize("update, rel", [({"dt_sim": 25e-6}, 0.02), ({"n_pi_sections": 4}, 0.03)])
def test_postfault_phasor_converges_with_discretization(coarse_event, update, rel):
    coarse = simulate_event(coarse_event)
    fine = simulate_event(coarse_event.model_copy(update=update))

    assert extract_phasor(fine.ia, 240, 80).magnitude == pytest.approx(
        extract_phasor(coarse.ia, 240, 80).magnitude, rel=rel)


@pytest.mark.parametrize("fault_type", [FaultType.BC, FaultType.ABC])
def test_ungrounded_fault_has_no_zero_mode(fault_type):
    record = simulate_event(presets.evaluation_event(fault_type, 100.0, 5.0, n_pi_sections=2, dt_sim=50e-6))

    current_peak = np.max(np.abs(record.ia))
    voltage_peak = np.max(np.abs(record.va))
    assert np.max(np.abs(record.ia + record.ib + record.ic)) <= 1e-6 * current_peak
    assert np.max(np.abs(record.va + record.vb + record.vc)) <= 1e-6 * voltage_peak


def test_energy_does_not_grow_without_sources(coarse_event):
    network = build_ladder(coarse_event)
    integrator = TransientNetwork(network, 50e-6, sources_enabled=False)
    integrator.initialize(steady_state_phasor_solve(network), 0.0)
    integrator.apply_fault(fault_conductance_stamp(coarse_event.fault_type, coarse_event.R_f))

    energies = []
    for _ in range(800):
        integrator.step()
        energies.append(integrator.stored_energy())

    energies = np.array(energies)
    assert np.all(np.diff(energies) <= 1e-9 * energies[0])
    assert energies[-1] < 0.9 * energies[0]
