"""
Оценивание параметров системы и КЗ по однократной записи одного конца линии:
сопротивление системы, угол нагрузки, угол включения и диапазон переходного сопротивления.
"""
import logging
import math

import numpy as np
from scipy.signal import butter, sosfiltfilt

from config import EstimationSettings, SignalSettings, get_settings
from models.estimation import ImpedanceCondition, ParameterEstimate
from models.line import LineParameters, SourceImpedance
from models.records import FaultType, WaveformRecord
from services.circuit import (
    SourcePhasors,
    build_mode_network,
    half_cycle_grid,
    integrate_mode_network,
    max_terminal_current_grid,
    solve_fault_current,
    solve_terminal_current,
)
from services.exceptions import (
    EstimationFailedError,
    FiaOrderingError,
    IllConditionedError,
    NoVoltageError,
    RangeNotFoundError,
    SignalLengthError,
    stage_scope,
)
from services.records import resample
from services.signals import (
    aerial_mode,
    central_difference,
    default_prefault_end,
    detect_fault_initiation,
    extract_phasor,
    fia_reference_mode,
    last_rising_zero_crossing,
    record_modes,
    rotate_phases,
)

logger = logging.getLogger(__name__)

# Доля номинального напряжения, ниже которой фазор считается отсутствующим
MIN_VOLTAGE_RATIO = 0.01


def _lowpass_fault_component(delta: np.ndarray, cutoff_hz: float, sample_rate: float) -> np.ndarray:
    """Фильтр Баттерворта второго порядка в прямом и обратном проходе (без фазового сдвига)"""
    sos = butter(2, cutoff_hz, fs=sample_rate, output="sos")
    return sosfiltfilt(sos, delta)


def estimate_source_impedance(mode_v, mode_i, t_f: int, mode: str, *, sample_rate: float,
                              samples_per_cycle: int = 80, max_condition: float = 1e8,
                              lowpass_hz: float = 0.0) -> ImpedanceCondition:
    """
    МНК-оценка R и L местной системы по аварийным составляющим одной моды.

    Аварийные составляющие Δy(t) = y(t) − y(t − ΔT) на [t_f, t_f + ΔT/2] связаны
    уравнением Δu = −(R·Δi + L·dΔi/dt). Столбцы матрицы нормируются перед
    решением нормальных уравнений, поэтому число обусловленности не зависит от масштаба.

    При lowpass_hz > 0 аварийные составляющие тока и напряжения проходят один и тот же
    фильтр нижних частот до взятия производной: уравнение линейно и сохраняется, а
    высокочастотные колебания после КЗ не искажают центральную разность. Фильтр
    применяется, только если после окна остаётся не меньше четверти периода отсчётов.

    Raises:
        SignalLengthError: Меньше 1,5 периода до t_f или полупериода после
        IllConditionedError: Число обусловленности выше max_condition
        EstimationFailedError: L ≤ 0 или нечисловое решение
    """
    v = np.asarray(mode_v, dtype=np.float64)
    i = np.asarray(mode_i, dtype=np.float64)
    n_cycle = samples_per_cycle
    half = n_cycle // 2
    if t_f < math.ceil(1.5 * n_cycle):
        raise SignalLengthError(f"До t_f={t_f} меньше 1,5 периода данных")
    if t_f + half + 1 >= len(i):
        raise SignalLengthError(f"После t_f={t_f} меньше полупериода данных")

    if 0.0 < lowpass_hz < sample_rate / 2.0 and len(i) - (t_f + half + 2) >= n_cycle // 4:
        # окно фильтрации с полупериодом доаварийных нулей перед t_f
        start = t_f - half
        delta_i = _lowpass_fault_component(i[start:] - i[start - n_cycle:len(i) - n_cycle], lowpass_hz, sample_rate)
        delta_v = _lowpass_fault_component(v[start:] - v[start - n_cycle:len(v) - n_cycle], lowpass_hz, sample_rate)
        rows = slice(half - 1, 2 * half + 2)
        delta_i, delta_v = delta_i[rows], delta_v[rows]
    else:
        rows = slice(t_f - 1, t_f + half + 2)
        delta_i = i[rows] - i[t_f - 1 - n_cycle:t_f + half + 2 - n_cycle]
        delta_v = v[rows] - v[t_f - 1 - n_cycle:t_f + half + 2 - n_cycle]
    derivative = central_difference(delta_i, 1.0 / sample_rate)[1:-1]
    A = np.column_stack([delta_i[1:-1], derivative])
    b = -delta_v[1:-1]

    norms = np.linalg.norm(A, axis=0)
    if np.any(norms == 0):
        raise IllConditionedError(f"Мода {mode}: нулевая аварийная составляющая тока", condition_number=math.inf)
    scaled = A / norms
    gram = scaled.T @ scaled
    condition = float(np.linalg.cond(gram))
    logger.debug(f"Мода {mode}: число обусловленности {condition:.3g}")
    if not math.isfinite(condition) or condition > max_condition:
        raise IllConditionedError(
            f"Мода {mode}: задача МНК плохо обусловлена (cond={condition:.3g})", condition_number=condition
        )
    det = gram[0, 0] * gram[1, 1] - gram[0, 1] ** 2
    inverse = np.array([[gram[1, 1], -gram[0, 1]], [-gram[0, 1], gram[0, 0]]]) / det
    R, L = inverse @ (scaled.T @ b) / norms
    residual = float(np.linalg.norm(A @ np.array([R, L]) - b))

    if not (math.isfinite(R) and math.isfinite(L)) or L <= 0:
        raise EstimationFailedError(f"Мода {mode}: недопустимая оценка L={L:.4g} Гн")
    clamped = R < 0
    if clamped:
        logger.warning(f"Мода {mode}: отрицательная оценка R={R:.4g} Ом заменена нулём")
        R = 0.0
    return ImpedanceCondition(mode=mode, R_ohm=float(R), L_h=float(L), residual_norm=residual,
                              condition_number=condition, r_clamped=clamped)


def source_phasors(mode_v, mode_i, t_0: float, Zs_aerial: complex, line: LineParameters, *,
                   frequency: float = 50.0, samples_per_cycle: int = 80,
                   nominal_voltage: float | None = None, line_charging: bool = True) -> SourcePhasors:
    """
    ЭДС местного и удалённого источников по доаварийному периоду, заканчивающемуся в t_0.

    Углы отнесены к t_0. Удалённый источник считается имеющим то же сопротивление.
    При line_charging линия представляется одним пи-звеном: ток ёмкости Y/2
    каждого конца вычитается из тока, проходящего через продольное сопротивление.

    Raises:
        NoVoltageError: Напряжение ниже 1% номинального
    """
    u1 = extract_phasor(mode_v, t_0, samples_per_cycle).complex
    i1 = extract_phasor(mode_i, t_0, samples_per_cycle).complex
    if nominal_voltage is None:
        if line.rated_kv is not None:
            nominal_voltage = line.rated_kv * 1e3 / math.sqrt(3.0)
        else:
            nominal_voltage = float(np.max(np.abs(mode_v))) / math.sqrt(2.0)
    if abs(u1) == 0.0 or abs(u1) < MIN_VOLTAGE_RATIO * nominal_voltage:
        raise NoVoltageError(f"Напряжение {abs(u1):.4g} В ниже 1% номинального {nominal_voltage:.4g} В")
    z_line = line.z_aerial_km(frequency) * line.length_km
    half_shunt = line.y_aerial_km(frequency) * line.length_km / 2.0 if line_charging else 0.0
    i_series = i1 - u1 * half_shunt
    u_remote = u1 - i_series * z_line
    i_remote = i_series - u_remote * half_shunt
    return SourcePhasors(u_s1=u1 + i1 * Zs_aerial, u_s2=u_remote - i_remote * Zs_aerial)


def wrap_degrees(angle: float) -> float:
    """Привести угол к (−180, 180]"""
    return 180.0 - (180.0 - angle) % 360.0


def estimate_loading(mode_v, mode_i, t_0: float, Zs_aerial: complex, line: LineParameters, *,
                     frequency: float = 50.0, samples_per_cycle: int = 80,
                     nominal_voltage: float | None = None, line_charging: bool = True) -> float:
    """Угол нагрузки, град: угол удалённой ЭДС минус угол местной"""
    phasors = source_phasors(mode_v, mode_i, t_0, Zs_aerial, line, frequency=frequency,
                             samples_per_cycle=samples_per_cycle, nominal_voltage=nominal_voltage,
                             line_charging=line_charging)
    difference = math.degrees(np.angle(phasors.u_s2) - np.angle(phasors.u_s1))
    return wrap_degrees(difference)


def estimate_fia(t_f: float, t_0: float, samples_per_cycle: int = 80) -> float:
    """
    Угол включения КЗ, град, в [0, 360).

    Raises:
        FiaOrderingError: t_0 ≥ t_f или t_f − t_0 больше периода
    """
    if not t_0 < t_f or t_f - t_0 > samples_per_cycle:
        raise FiaOrderingError(f"Нарушен порядок моментов: t_0={t_0}, t_f={t_f}")
    return (360.0 * (t_f - t_0) / samples_per_cycle) % 360.0


def rf_grid_from_settings(settings: EstimationSettings) -> np.ndarray:
    return np.geomspace(settings.rf_min_ohm, settings.rf_max_ohm, settings.rf_points)


def lf_grid_for_line(length_km: float, step_km: float = 1.0) -> np.ndarray:
    """Узлы места КЗ внутри линии с шагом step_km (концы линии исключены)"""
    grid = np.arange(step_km, length_km - 1e-9, step_km)
    if grid.size == 0:
        grid = np.array([length_km / 2.0])
    return grid


def estimate_rf_range(meas_peak: float, fault_type: FaultType, line: LineParameters, src: SourceImpedance,
                      phasors: SourcePhasors, i1_0: float, margin: float = 0.05, rf_grid=None, lf_grid=None,
                      *, frequency: float = 50.0, samples_per_cycle: int = 80, oversample: int = 10,
                      llg_table_value: bool = False, current_scale: float = 1.0) -> tuple[float, float]:
    """
    Диапазон R_f, при котором модельный max|i1| попадает в [(1−c), (1+c)]·meas_peak
    хотя бы для одного места КЗ.

    Поверхность умножается на current_scale, в котором задан meas_peak. Если условию
    не удовлетворяет ни один узел, в исключении указывается узел, ближайший к полосе допуска.

    Raises:
        RangeNotFoundError: Ни один узел сетки не удовлетворяет условию
    """
    settings = get_settings().estimation
    rf_grid = rf_grid_from_settings(settings) if rf_grid is None else np.sort(np.asarray(rf_grid, dtype=np.float64))
    lf_grid = lf_grid_for_line(line.length_km, settings.lf_step_km) if lf_grid is None else np.asarray(lf_grid)
    surface = max_terminal_current_grid(fault_type, lf_grid, rf_grid, line, src, phasors, i1_0,
                                        frequency=frequency, samples_per_cycle=samples_per_cycle,
                                        oversample=oversample, llg_table_value=llg_table_value) * current_scale
    lower, upper = (1.0 - margin) * meas_peak, (1.0 + margin) * meas_peak
    feasible = np.any((surface >= lower) & (surface <= upper), axis=0)
    if not feasible.any():
        # расстояние до полосы допуска, а не до её середины
        miss = np.maximum(lower - surface, surface - upper)
        row, col = np.unravel_index(int(np.argmin(miss)), miss.shape)
        nearest = {"l_f_km": float(lf_grid[row]), "R_f_ohm": float(rf_grid[col]),
                   "max_current_a": float(surface[row, col]), "relative_miss": float(miss[row, col] / meas_peak),
                   "side": "below" if surface[row, col] < lower else "above"}
        raise RangeNotFoundError(
            f"Нет R_f с max|i1| в [{lower:.4g}, {upper:.4g}] А; ближайший узел {nearest}", nearest_miss=nearest
        )
    indices = np.flatnonzero(feasible)
    low = 0.0 if indices[0] == 0 else float(rf_grid[indices[0]])
    high = float(rf_grid[indices[-1]])
    if indices[-1] == len(rf_grid) - 1:
        logger.warning(f"Верхняя граница R_f {high:.4g} Ом совпала с краем сетки, истинная граница может быть выше")
    logger.info(f"Диапазон переходного сопротивления: [{low:.4g}, {high:.4g}] Ом")
    return low, high


def estimate_all(record: WaveformRecord, fault_type: FaultType | str, line: LineParameters,
                 signal_settings: SignalSettings | None = None,
                 estimation_settings: EstimationSettings | None = None) -> ParameterEstimate:
    """Полная оценка параметров: поворот фаз, моды, t_f, t_0, Z_s, нагрузка, УВК, диапазон R_f"""
    signal_settings = signal_settings or get_settings().signals
    estimation_settings = estimation_settings or get_settings().estimation
    n_cycle = signal_settings.samples_per_cycle

    with stage_scope("rotate"):
        rotation = rotate_phases(record, fault_type)
        canonical = rotation.canonical
        rotated = rotation.record
        if rotated.samples_per_cycle != n_cycle:
            rotated = resample(rotated, n_cycle)
        voltages, currents = record_modes(rotated)
    mode = aerial_mode(canonical)

    with stage_scope("detect"):
        t_f = detect_fault_initiation(currents, default_prefault_end(n_cycle), signal_settings.k_ff,
                                      signal_settings.noise_floor_ratio)
    with stage_scope("zero_crossing"):
        t_0 = last_rising_zero_crossing(voltages.mode(fia_reference_mode(canonical)), t_f, n_cycle)
    logger.info(f"Момент КЗ t_f={t_f}, переход через ноль t_0={t_0:.3f}")

    with stage_scope("impedance"):
        common = dict(sample_rate=rotated.sample_rate, samples_per_cycle=n_cycle,
                      max_condition=estimation_settings.max_condition, lowpass_hz=estimation_settings.lowpass_hz)
        aerial = estimate_source_impedance(voltages.mode(mode), currents.mode(mode), t_f, mode, **common)
        report = [aerial]
        omega = 2.0 * math.pi * rotated.base_frequency
        z_aerial = complex(aerial.R_ohm, omega * aerial.L_h)
        z_zero = None
        if canonical.involves_ground:
            zero = estimate_source_impedance(voltages.zero, currents.zero, t_f, "zero", **common)
            report.append(zero)
            z_zero = complex(zero.R_ohm, omega * zero.L_h)

    with stage_scope("loading"):
        charging = dict(frequency=rotated.base_frequency, samples_per_cycle=n_cycle,
                        line_charging=estimation_settings.line_charging)
        loading = estimate_loading(voltages.mode(mode), currents.mode(mode), t_0, z_aerial, line, **charging)
        phasors = source_phasors(voltages.mode(mode), currents.mode(mode), t_0, z_aerial, line, **charging)
        shift = np.exp(1j * omega * (t_f - t_0) / rotated.sample_rate)
        phasors = SourcePhasors(phasors.u_s1 * shift, phasors.u_s2 * shift)

    with stage_scope("fia"):
        fia = estimate_fia(t_f, t_0, n_cycle)

    measured = currents.mode(mode)
    peak_scale = math.sqrt(1.5) if estimation_settings.power_invariant_peak else 1.0
    meas_peak = peak_scale * float(np.max(np.abs(measured[t_f:t_f + n_cycle // 2 + 1])))
    i1_0 = float(measured[t_f])
    estimate = dict(fault_type=canonical, permutation=rotation.permutation, mode=mode, Zs_aerial=z_aerial,
                    Zs_zero=z_zero, loading_deg=loading, fia_deg=fia, t_f_index=t_f, t_0_index=t_0,
                    meas_peak_a=meas_peak, peak_scale=peak_scale, i1_0=i1_0, u_s1=phasors.u_s1,
                    u_s2=phasors.u_s2, condition_report=report, frequency=rotated.base_frequency)

    with stage_scope("rf_range"):
        src = ParameterEstimate(rf_range=(0.0, 0.0), **estimate).source_impedance()
        rf_grid = rf_grid_from_settings(estimation_settings)
        rf_range = estimate_rf_range(
            meas_peak, canonical, line, src, phasors, i1_0, estimation_settings.margin_c, rf_grid,
            lf_grid_for_line(line.length_km, estimation_settings.lf_step_km),
            frequency=rotated.base_frequency, samples_per_cycle=n_cycle,
            oversample=estimation_settings.oversample, llg_table_value=estimation_settings.llg_table_value,
            current_scale=peak_scale,
        )
        estimate["rf_upper_clipped"] = bool(rf_range[1] >= rf_grid[-1])
    logger.info(
        f"Оценка: Zs={z_aerial:.4f} Ом, нагрузка {loading:.4f}°, УВК {fia:.2f}°, "
        f"R_f ∈ [{rf_range[0]:.3g}, {rf_range[1]:.3g}] Ом"
    )
    return ParameterEstimate(rf_range=rf_range, **estimate)


def oracle_deviation(estimate: ParameterEstimate, line: LineParameters, l_f: float | None = None,
                     R_f: float | None = None, dt: float = 1e-6,
                     llg_table_value: bool = False) -> float:
    """
    Расхождение аналитического тока местного конца с численным интегрированием
    цепи моды на первом полупериоде, в долях максимума. По умолчанию КЗ в середине
    линии с верхней границей оценённого диапазона R_f.
    """
    l_f = line.length_km / 2.0 if l_f is None else l_f
    R_f = max(estimate.rf_range[1], 0.01) if R_f is None else R_f
    frequency = estimate.frequency
    net = build_mode_network(estimate.fault_type, l_f, R_f, line, estimate.source_impedance(), llg_table_value)
    phasors = SourcePhasors(estimate.u_s1, estimate.u_s2)
    i_f = solve_fault_current(net, net.u_seq(estimate.u_s1, estimate.u_s2), frequency)
    analytic = solve_terminal_current(net, i_f, estimate.u_s1, estimate.i1_0)
    t_end = float(half_cycle_grid(frequency)[-1])
    numeric = integrate_mode_network(net, phasors, estimate.i1_0, t_end, dt=dt, frequency=frequency)
    reference = analytic(numeric.t)
    peak = float(np.max(np.abs(reference)))
    deviation = float(np.max(np.abs(reference - numeric.i1))) / peak if peak > 0 else 0.0
    logger.info(f"Проверка аналитического решения: l_f={l_f:g} км, R_f={R_f:g} Ом, отклонение {deviation:.2e}")
    return deviation
