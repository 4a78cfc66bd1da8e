import math

import numpy as np
import pytest

from models.records import FaultType
from services.exceptions import (
    NoFaultDetectedError,
    PhasorWindowError,
    UnknownFaultTypeError,
    ZeroCrossingNotFoundError,
)
from services.signals import (
    aerial_mode,
    central_difference,
    clarke_forward,
    clarke_inverse,
    clarke_matrix_transform,
    default_prefault_end,
    detect_fault_initiation,
    extract_phasor,
    fia_reference_mode,
    last_rising_zero_crossing,
    record_modes,
    rotate_phases,
)

N = 80


def _balanced(n: int = 4 * N, amplitude: float = 100.0):
    theta = 2.0 * math.pi * np.arange(n) / N
    return (amplitude * np.sin(theta), amplitude * np.sin(theta - 2.0 * math.pi / 3.0),
            amplitude * np.sin(theta + 2.0 * math.pi / 3.0))


def test_clarke_balanced_set_has_no_zero_mode():
    a, b, c = _balanced()

    modes = clarke_forward(a, b, c)

    assert np.allclose(modes.alpha, a)
    assert np.max(np.abs(modes.zero)) < 1e-9


def test_clarke_inverse_restores_phases():
    rng = np.random.default_rng(1)
    a, b, c = rng.normal(size=(3, 50))

    phases = clarke_inverse(clarke_forward(a, b, c))

    assert np.allclose(phases, np.vstack([a, b, c]))


def test_clarke_matrix_transform_diagonalizes_balanced_matrix():
    matrix = np.full((3, 3), 0.2)
    np.fill_diagonal(matrix, 1.0)

    modal = clarke_matrix_transform(matrix)

    assert np.allclose(modal, np.diag([0.8, 0.8, 1.4]))


def test_extract_phasor_angle_is_referred_to_window_end():
    end = 159
    n = np.arange(4 * N)
    x = math.sqrt(2.0) * 50.0 * np.cos(2.0 * math.pi * (n - end) / N + 0.3)

    phasor = extract_phasor(x, end, N)

    assert phasor.magnitude == pytest.approx(50.0)
    assert phasor.angle == pytest.approx(0.3)


def test_extract_phasor_window_out_of_bounds():
    with pytest.raises(PhasorWindowError):
        extract_phasor(np.zeros(4 * N), 10, N)


def test_last_rising_zero_crossing_interpolates():
    n = np.arange(4 * N)
    u = np.sin(2.0 * math.pi * (n - 10.5) / N)

    assert last_rising_zero_crossing(u, 100.0, N) == pytest.approx(90.5)


def test_last_rising_zero_crossing_missing():
    with pytest.raises(ZeroCrossingNotFoundError):
        last_rising_zero_crossing(np.ones(4 * N), 200.0, N)


def test_detect_fault_initiation_finds_current_step():
    a, b, c = _balanced()
    a = a + np.where(np.arange(a.size) >= 200, 1000.0, 0.0)
    modes = clarke_forward(a, b, c, sample_rate=4000.0, base_frequency=50.0)

    index = detect_fault_initiation(modes, default_prefault_end(N))

    assert abs(index - 200) <= 1


def test_detect_fault_initiation_without_fault():
    modes = clarke_forward(*_balanced(), sample_rate=4000.0, base_frequency=50.0)

    with pytest.raises(NoFaultDetectedError):
        detect_fault_initiation(modes, default_prefault_end(N))


def test_record_modes_follow_record(make_record):
    record = make_record(fault_index=200)

    voltages, currents = record_modes(record)

    assert voltages.samples_per_cycle == pytest.approx(80.0)
    assert np.allclose(currents.zero[200:], 5e3 / 3.0, atol=1e-6)


def test_rotate_phases_moves_faulted_phase_to_a(make_record):
    record = make_record()

    rotation = rotate_phases(record, "CG")

    assert rotation.canonical is FaultType.AG
    assert np.array_equal(rotation.record.va, record.vc)
    assert np.array_equal(rotation.record.ib, record.ia)


def test_rotate_phases_unknown_type(make_record):
    with pytest.raises(UnknownFaultTypeError):
        rotate_phases(make_record(), "XG")


@pytest.mark.parametrize(
    "fault_type, aerial, reference",
    [
        (FaultType.AG, "alpha", "alpha"),
        (FaultType.BC, "beta", "beta"),
        (FaultType.BCG, "beta", "beta"),
        (FaultType.ABC, "beta", "alpha"),
    ],
)
def test_mode_choice(fault_type, aerial, reference):
    assert aerial_mode(fault_type) == aerial
    assert fia_reference_mode(fault_type) == reference


def test_central_difference_is_exact_on_ramp():
    t = np.arange(50) / 4000.0
    derivative = central_difference(3.0 + 2.5 * t, 1.0 / 4000.0)

    assert np.allclose(derivative, 2.5, rtol=1e-9)


def test_central_difference_on_sine():
    omega = 2.0 * math.pi * 50.0
    t = np.arange(4 * N) / 4000.0

    derivative = central_difference(np.sin(omega * t), 1.0 / 4000.0)

    assert np.max(np.abs(derivative[1:-1] - omega * np.cos(omega * t[1:-1]))) <= 2e-3 * omega


@pytest.mark.parametrize("scale", [2.0 ** 10, 2.0 ** -10])
def test_detect_fault_initiation_ignores_current_scale(scale):
    a, b, c = _balanced()
    a = a + np.where(np.arange(a.size) >= 200, 1000.0, 0.0)
    reference = detect_fault_initiation(clarke_forward(a, b, c, sample_rate=4000.0, base_frequency=50.0),
                                        default_prefault_end(N))

    scaled = clarke_forward(scale * a, scale * b, scale * c, sample_rate=4000.0, base_frequency=50.0)

    assert detect_fault_initiation(scaled, default_prefault_end(N)) == reference
