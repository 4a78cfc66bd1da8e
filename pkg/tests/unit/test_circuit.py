import cmath
from dataclasses import replace

import numpy as np
import pytest

from models.line import SourceImpedance
from models.records import FaultType
from services.circuit import (
    SourcePhasors,
    TheveninBranch,
    build_mode_network,
    half_cycle_grid,
    integrate_mode_network,
    max_terminal_current,
    max_terminal_current_grid,
    parallel_ratio_mismatch,
    solve_fault_current,
    solve_terminal_current,
    thevenin_parallel,
)
from services.exceptions import InvalidNetworkError

SOURCE = SourceImpedance.from_complex(2.4 + 6.6j, 4.1 + 12.3j)
PHASORS = SourcePhasors(u_s1=280e3 + 0j, u_s2=280e3 * cmath.exp(-0.2j))
UNLOADED = SourcePhasors(u_s1=280e3 + 0j, u_s2=280e3 + 0j)


def test_thevenin_parallel_of_proportional_branches():
    b1 = TheveninBranch(R=1.0, L=1e-3, source=10.0)
    b2 = TheveninBranch(R=2.0, L=2e-3, source=4.0)

    equivalent = thevenin_parallel(b1, b2)

    assert equivalent.R == pytest.approx(2.0 / 3.0)
    assert equivalent.L == pytest.approx(2e-3 / 3.0)
    assert equivalent.source == pytest.approx(8.0)
    assert parallel_ratio_mismatch(b1, b2) == pytest.approx(0.0)


def test_thevenin_branch_rejects_negative_resistance():
    with pytest.raises(InvalidNetworkError):
        TheveninBranch(R=-1.0, L=1e-3)


@pytest.mark.parametrize(
    "l_f, R_f, fault_type",
    [(0.0, 1.0, FaultType.AG), (200.0, 1.0, FaultType.AG), (50.0, 0.0, FaultType.AG), (50.0, 1.0, FaultType.CG)],
)
def test_build_mode_network_rejects_invalid_inputs(reference_line, l_f, R_f, fault_type):
    with pytest.raises(InvalidNetworkError):
        build_mode_network(fault_type, l_f, R_f, reference_line, SOURCE)


@pytest.mark.parametrize(
    "fault_type, llg_table_value, expected_r4",
    [
        (FaultType.BC, False, 3.0),
        (FaultType.BCG, False, 6.0),
        (FaultType.BCG, True, 3.0),
        (FaultType.ABC, False, 2.0),
    ],
)
def test_fault_branch_resistance(reference_line, fault_type, llg_table_value, expected_r4):
    net = build_mode_network(fault_type, 50.0, 6.0, reference_line, SOURCE, llg_table_value)

    assert net.R4 == pytest.approx(expected_r4)
    assert net.L4 == 0.0
    assert net.mode == "beta"


def test_single_phase_network_includes_zero_mode(reference_line):
    net = build_mode_network(FaultType.AG, 50.0, 2.0, reference_line, SOURCE)

    assert net.mode == "alpha"
    assert net.R4 == pytest.approx(0.5 * net.R_eq0 + 3.0)
    assert net.L4 == pytest.approx(0.5 * net.L_eq0)
    assert sum(net.seq_weights) == pytest.approx(1.0)


def test_half_cycle_grid():
    grid = half_cycle_grid(50.0, 80, 10)

    assert grid.size == 401
    assert grid[-1] == pytest.approx(0.01)


@pytest.mark.parametrize("fault_type", [FaultType.AG, FaultType.BC, FaultType.ABC])
def test_analytic_terminal_current_matches_integration(reference_line, fault_type):
    net = build_mode_network(fault_type, 75.0, 3.0, reference_line, SOURCE)
    i_f = solve_fault_current(net, net.u_seq(PHASORS.u_s1, PHASORS.u_s2))
    terminal = solve_terminal_current(net, i_f, PHASORS.u_s1, i1_0=1500.0)

    numeric = integrate_mode_network(net, PHASORS, 1500.0, 0.01, dt=1e-6)
    analytic = terminal(numeric.t)

    peak = np.max(np.abs(analytic))
    assert np.max(np.abs(analytic - numeric.i1)) <= 5e-3 * peak
    assert np.max(np.abs(i_f(numeric.t) - numeric.i_f)) <= 5e-3 * np.max(np.abs(numeric.i_f))


def test_fault_current_starts_at_zero(reference_line):
    net = build_mode_network(FaultType.AG, 25.0, 1.0, reference_line, SOURCE)
    i_f = solve_fault_current(net, net.u_seq(PHASORS.u_s1, PHASORS.u_s2))

    assert float(i_f(0.0)) == pytest.approx(0.0, abs=1e-6)


def test_reduced_network_matches_full_network_for_proportional_branches(reference_line):
    # КЗ в середине линии: ветви источников одинаковы, приведение точное
    net = build_mode_network(FaultType.BC, 100.0, 2.0, reference_line, SOURCE)
    assert net.ratio_mismatch == pytest.approx(0.0, abs=1e-12)

    reduced = integrate_mode_network(net, PHASORS, 800.0, 0.01, dt=1e-6)
    full = integrate_mode_network(net, PHASORS, 800.0, 0.01, dt=1e-6, full_network=True)

    peak = np.max(np.abs(full.i1))
    assert np.max(np.abs(reduced.i1 - full.i1)) <= 1e-3 * peak
    assert np.max(np.abs(reduced.i_f - full.i_f)) <= 1e-3 * np.max(np.abs(full.i_f))


def test_max_current_grid_matches_pointwise(reference_line):
    lf_grid = [25.0, 100.0, 175.0]
    rf_grid = [0.5, 5.0, 50.0]

    surface = max_terminal_current_grid(FaultType.AG, lf_grid, rf_grid, reference_line, SOURCE, PHASORS, 500.0)

    assert surface.shape == (3, 3)
    for row, l_f in enumerate(lf_grid):
        for col, R_f in enumerate(rf_grid):
            expected = max_terminal_current(FaultType.AG, l_f, R_f, reference_line, SOURCE, PHASORS, 500.0)
            assert surface[row, col] == pytest.approx(expected, rel=1e-7)


def test_max_current_decreases_with_resistance(reference_line):
    # без нагрузки i1(0) = 0 согласовано с доаварийным режимом
    surface = max_terminal_current_grid(FaultType.AG, [50.0], [0.5, 10.0, 300.0], reference_line, SOURCE,
                                        UNLOADED, 0.0)

    assert surface[0, 0] > surface[0, 1] > surface[0, 2]
    assert surface[0, 2] < 0.2 * surface[0, 0]


@pytest.mark.parametrize("fault_type", [FaultType.AG, FaultType.BC, FaultType.ABC])
def test_steady_terminal_amplitude_decreases_with_resistance(reference_line, fault_type):
    rf_grid = np.geomspace(0.1, 500.0, 40)
    for l_f in np.linspace(1.0, 199.0, 9):
        amplitudes = []
        for R_f in rf_grid:
            net = build_mode_network(fault_type, l_f, R_f, reference_line, SOURCE)
            i_f = solve_fault_current(net, net.u_seq(UNLOADED.u_s1, UNLOADED.u_s2))
            amplitudes.append(solve_terminal_current(net, i_f, UNLOADED.u_s1, 0.0).M_sol2)

        assert np.all(np.diff(amplitudes) < 0)


def test_terminal_current_tends_to_load_current_for_open_fault(reference_line):
    net = build_mode_network(FaultType.BC, 100.0, 1e9, reference_line, SOURCE)
    z_half = SOURCE.z_aerial() + reference_line.z_aerial_km(50.0) * 100.0
    load_amplitude = np.sqrt(2.0) * (PHASORS.u_s1 - PHASORS.u_s2) / (2.0 * z_half)
    i_f = solve_fault_current(net, net.u_seq(PHASORS.u_s1, PHASORS.u_s2))

    terminal = solve_terminal_current(net, i_f, PHASORS.u_s1, i1_0=load_amplitude.real)

    assert terminal.M_sol2 == pytest.approx(abs(load_amplitude), rel=1e-3)
    peak = max_terminal_current(FaultType.BC, 100.0, 1e9, reference_line, SOURCE, PHASORS, load_amplitude.real)
    assert peak == pytest.approx(abs(load_amplitude), rel=1e-3)


def test_reduced_network_error_for_mismatched_branches(reference_line):
    proportional = build_mode_network(FaultType.BC, 100.0, 2.0, reference_line, SOURCE)
    L3 = proportional.L2 / 0.7
    L_eq = proportional.L2 * L3 / (proportional.L2 + L3)
    net = replace(proportional, L3=L3, L_eq=L_eq, L1=L_eq + proportional.L4)
    assert net.ratio_mismatch == pytest.approx(0.3)

    reduced = integrate_mode_network(net, PHASORS, 800.0, 0.01, dt=1e-6)
    full = integrate_mode_network(net, PHASORS, 800.0, 0.01, dt=1e-6, full_network=True)

    peak = np.max(np.abs(full.i1))
    error = np.max(np.abs(reduced.i1 - full.i1))
    assert 1e-4 * peak < error <= 0.1 * peak


def test_max_current_grid_rejects_points_outside_line(reference_line):
    with pytest.raises(InvalidNetworkError):
        max_terminal_current_grid(FaultType.AG, [50.0, 250.0], [1.0], reference_line, SOURCE, PHASORS, 0.0)
