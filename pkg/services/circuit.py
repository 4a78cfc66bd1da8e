"""
Аналитическая модель повреждённой линии в модальных координатах.

Цепь одной моды: ветвь местного источника (R2, L2), ветвь удалённого источника
(R3, L3) и ветвь КЗ (R4, L4). Ток КЗ находится из приведённой цепи с эквивалентом
Тевенина (R1, L1, u_seq), ток местного конца из уравнения ветви (R2, L2).
Все напряжения и токи в установившемся режиме задаются комплексными
действующими значениями с углом, отнесённым к моменту возникновения КЗ (t = 0).
"""
import logging
import math
from dataclasses import dataclass
from typing import Any, NamedTuple

import numpy as np

from models.line import LineParameters, SourceImpedance
from models.records import FaultType
from services.exceptions import InvalidNetworkError
from services.signals import Phasor, aerial_mode

logger = logging.getLogger(__name__)

SQRT2 = math.sqrt(2.0)
# Относительная близость B3 и B1, при которой используется предельная форма решения
DEGENERACY_TOLERANCE = 1e-6
# Число строк сетки l_f, обрабатываемых за один проход
GRID_CHUNK_ROWS = 8


@dataclass(frozen=True)
class TheveninBranch:
    """Ветвь Тевенина: R, L и источник (комплексный фазор или отсчёты во времени)"""
    R: float
    L: float
    source: Any = 0.0
    resistive: bool = False

    def __post_init__(self):
        if self.R < 0:
            raise InvalidNetworkError(f"Отрицательное сопротивление ветви: {self.R}")
        if self.L < 0 or (self.L == 0 and not self.resistive):
            raise InvalidNetworkError(f"Индуктивность ветви должна быть положительной: {self.L}")


class SourcePhasors(NamedTuple):
    """Модальные ЭДС местного и удалённого источников (действующие значения, t = 0)"""
    u_s1: complex
    u_s2: complex


@dataclass(frozen=True)
class ModeNetwork:
    fault_type: FaultType
    mode: str
    l_f: float
    R_f: float
    R1: float
    L1: float
    R2: float
    L2: float
    R3: float
    L3: float
    R4: float
    L4: float
    seq_weights: tuple[float, float]
    R_eq: float
    L_eq: float
    R_eq0: float | None = None
    L_eq0: float | None = None

    def u_seq(self, u_s1, u_s2):
        """Эквивалентная ЭДС приведённой цепи (фазор или отсчёты)"""
        w1, w2 = self.seq_weights
        return w1 * u_s1 + w2 * u_s2

    @property
    def ratio_mismatch(self) -> float:
        """Несоответствие R2/R3 и L2/L3, определяющее погрешность приведения"""
        return parallel_ratio_mismatch(TheveninBranch(self.R2, self.L2), TheveninBranch(self.R3, self.L3))


@dataclass(frozen=True)
class FaultCurrentSolution:
    """i_f(t) = −Re(S)·e^(−B1·t) + Re(S·e^(jωt)), S = M_sol1·e^(jφ_sol1)"""
    B1: float
    amplitude: complex
    omega: float

    @property
    def M_sol1(self) -> float:
        return abs(self.amplitude)

    @property
    def phi_sol1(self) -> float:
        return math.atan2(self.amplitude.imag, self.amplitude.real)

    @property
    def phasor(self) -> complex:
        """Установившаяся составляющая тока КЗ (действующее значение)"""
        return self.amplitude / SQRT2

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        return (-self.amplitude.real * np.exp(-self.B1 * t)
                + np.real(self.amplitude * np.exp(1j * self.omega * t)))


@dataclass(frozen=True)
class TerminalCurrentSolution:
    B1: float
    B3: float
    amplitude: complex
    A_step2: float
    i1_0: float
    omega: float

    @property
    def M_sol2(self) -> float:
        return abs(self.amplitude)

    @property
    def phi_sol2(self) -> float:
        return math.atan2(self.amplitude.imag, self.amplitude.real)

    @property
    def degenerate(self) -> bool:
        return abs(self.B3 - self.B1) < DEGENERACY_TOLERANCE * self.B1

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        values = _terminal_waveform(self.B1, self.B3, self.amplitude, self.A_step2, self.i1_0,
                                    np.atleast_1d(t), self.omega)
        return values.reshape(t.shape)


class ModeIntegration(NamedTuple):
    t: np.ndarray
    i_f: np.ndarray
    i1: np.ndarray


def _as_complex(value) -> complex:
    if isinstance(value, Phasor):
        return value.complex
    return complex(value)


def _parallel(R_b1, L_b1, R_b2, L_b2):
    R_eq = R_b1 * R_b2 / (R_b1 + R_b2)
    L_eq = L_b1 * L_b2 / (L_b1 + L_b2)
    return R_eq, L_eq


def thevenin_parallel(b1: TheveninBranch, b2: TheveninBranch) -> TheveninBranch:
    """
    Заменить две параллельные ветви Тевенина одной.

    Приведение точно, когда R_b1/R_b2 = L_b1/L_b2; погрешность см. parallel_ratio_mismatch.

    Raises:
        InvalidNetworkError: Суммарные R или L ветвей равны нулю
    """
    if b1.R + b2.R <= 0 or b1.L + b2.L <= 0:
        raise InvalidNetworkError("Обе ветви имеют нулевое сопротивление")
    R_eq, L_eq = _parallel(b1.R, b1.L, b2.R, b2.L)
    source = (b2.R * b1.source + b1.R * b2.source) / (b1.R + b2.R)
    return TheveninBranch(R=R_eq, L=L_eq, source=source, resistive=L_eq == 0)


def parallel_ratio_mismatch(b1: TheveninBranch, b2: TheveninBranch) -> float:
    """|R_b1/R_b2 − L_b1/L_b2| / (R_b1/R_b2)"""
    if b2.R == 0 or b2.L == 0 or b1.R == 0:
        return math.inf
    ratio_r = b1.R / b2.R
    return abs(ratio_r - b1.L / b2.L) / ratio_r


def _network_arrays(fault_type: FaultType, l_f, R_f, line: LineParameters, src: SourceImpedance,
                    llg_table_value: bool = False) -> dict[str, np.ndarray]:
    """Параметры цепи одной моды; l_f и R_f могут быть массивами, совместимыми по форме"""
    l_f = np.asarray(l_f, dtype=np.float64)
    R_f = np.asarray(R_f, dtype=np.float64)
    R2 = src.R_aerial + l_f * line.R1_km
    L2 = src.L_aerial + l_f * line.L1_km
    R3 = src.R_aerial + (line.length_km - l_f) * line.R1_km
    L3 = src.L_aerial + (line.length_km - l_f) * line.L1_km
    R_eq, L_eq = _parallel(R2, L2, R3, L3)
    arrays = dict(R2=R2, L2=L2, R3=R3, L3=L3, R_eq=R_eq, L_eq=L_eq,
                  w1=R3 / (R2 + R3), w2=R2 / (R2 + R3))

    if fault_type is FaultType.AG:
        R_eq0, L_eq0 = _parallel(
            src.R_zero + l_f * line.R0_km, src.L_zero + l_f * line.L0_km,
            src.R_zero + (line.length_km - l_f) * line.R0_km, src.L_zero + (line.length_km - l_f) * line.L0_km,
        )
        R4 = 0.5 * R_eq0 + 1.5 * R_f
        L4 = 0.5 * L_eq0 + np.zeros_like(R_f)
        arrays.update(R_eq0=R_eq0, L_eq0=L_eq0)
    elif fault_type is FaultType.BC:
        R4, L4 = R_f / 2.0, np.zeros_like(R_f)
    elif fault_type is FaultType.BCG:
        R4, L4 = (R_f / 2.0 if llg_table_value else R_f), np.zeros_like(R_f)
    elif fault_type is FaultType.ABC:
        R4, L4 = R_f / 3.0, np.zeros_like(R_f)
    else:
        raise InvalidNetworkError(f"Вид КЗ {fault_type.value} не канонический, сначала поверните фазы")

    arrays.update(R4=R4, L4=L4, R1=R_eq + R4, L1=L_eq + L4)
    return arrays


def _check_network_inputs(fault_type, l_f: float, R_f: float, line: LineParameters) -> FaultType:
    fault_type = FaultType(fault_type)
    if not fault_type.is_canonical:
        raise InvalidNetworkError(f"Вид КЗ {fault_type.value} не канонический, сначала поверните фазы")
    if not 0.0 < l_f < line.length_km:
        raise InvalidNetworkError(f"Место КЗ {l_f} км вне линии длиной {line.length_km} км")
    if R_f <= 0:
        raise InvalidNetworkError(f"Переходное сопротивление должно быть положительным: {R_f}")
    return fault_type


def build_mode_network(fault_type: FaultType, l_f: float, R_f: float, line: LineParameters,
                       src: SourceImpedance, llg_table_value: bool = False) -> ModeNetwork:
    """
    Собрать цепь расчётной моды для канонического вида КЗ.

    Raises:
        InvalidNetworkError: l_f вне линии, R_f ≤ 0 или вид КЗ не канонический
    """
    fault_type = _check_network_inputs(fault_type, l_f, R_f, line)
    arrays = _network_arrays(fault_type, l_f, R_f, line, src, llg_table_value)
    value = {name: float(v) for name, v in arrays.items()}
    return ModeNetwork(
        fault_type=fault_type,
        mode=aerial_mode(fault_type),
        l_f=float(l_f),
        R_f=float(R_f),
        R1=value["R1"], L1=value["L1"],
        R2=value["R2"], L2=value["L2"],
        R3=value["R3"], L3=value["L3"],
        R4=value["R4"], L4=value["L4"],
        seq_weights=(value["w1"], value["w2"]),
        R_eq=value["R_eq"], L_eq=value["L_eq"],
        R_eq0=value.get("R_eq0"), L_eq0=value.get("L_eq0"),
    )


def _terminal_coefficients(R1, L1, R2, L2, R4, L4, u_seq, u_s1, omega: float):
    """Коэффициенты решений для тока КЗ и тока местного конца (поэлементно)"""
    B1 = R1 / L1
    fault_amplitude = SQRT2 * u_seq / (L1 * (B1 + 1j * omega))
    B3 = R2 / L2
    fault_phasor = fault_amplitude / SQRT2
    terminal_amplitude = SQRT2 * (u_s1 - (R4 + 1j * omega * L4) * fault_phasor) / (L2 * (B3 + 1j * omega))
    A_step2 = (R4 - B1 * L4) * np.real(fault_amplitude) / L2
    return B1, fault_amplitude, B3, terminal_amplitude, A_step2


def _terminal_waveform(B1, B3, amplitude, A_step2, i1_0, t, omega: float) -> np.ndarray:
    """i1(t); коэффициенты расширяются по последней оси времени"""
    B1, B3, amplitude, A_step2 = (np.asarray(x)[..., None] for x in (B1, B3, amplitude, A_step2))
    difference = B3 - B1
    degenerate = np.abs(difference) < DEGENERACY_TOLERANCE * B1
    safe_difference = np.where(degenerate, 1.0, difference)
    decay_b1 = np.exp(-B1 * t)
    decay_b3 = np.exp(-B3 * t)
    cross = np.where(degenerate, A_step2 * t * decay_b1, A_step2 / safe_difference * (decay_b1 - decay_b3))
    result = (i1_0 - np.real(amplitude)) * decay_b3 + np.real(amplitude * np.exp(1j * omega * t)) + cross
    return result


def solve_fault_current(net: ModeNetwork, U_seq: Phasor | complex, frequency: float = 50.0) -> FaultCurrentSolution:
    """Решение уравнения тока КЗ с нулевым начальным условием"""
    omega = 2.0 * math.pi * frequency
    B1 = net.R1 / net.L1
    amplitude = SQRT2 * _as_complex(U_seq) / (net.L1 * (B1 + 1j * omega))
    return FaultCurrentSolution(B1=B1, amplitude=complex(amplitude), omega=omega)


def solve_terminal_current(net: ModeNetwork, i_f: FaultCurrentSolution, U_s1: Phasor | complex,
                           i1_0: float) -> TerminalCurrentSolution:
    """Решение уравнения тока местного конца с начальным условием i1(0⁺) = i1_0"""
    omega = i_f.omega
    B3 = net.R2 / net.L2
    forcing = _as_complex(U_s1) - (net.R4 + 1j * omega * net.L4) * i_f.phasor
    amplitude = SQRT2 * forcing / (net.L2 * (B3 + 1j * omega))
    A_step2 = (net.R4 - i_f.B1 * net.L4) * i_f.amplitude.real / net.L2
    solution = TerminalCurrentSolution(B1=i_f.B1, B3=B3, amplitude=complex(amplitude), A_step2=float(A_step2),
                                       i1_0=float(i1_0), omega=omega)
    if solution.degenerate:
        logger.debug(f"B3 ≈ B1 ({B3:.6g}), используется предельная форма решения")
    return solution


def half_cycle_grid(frequency: float = 50.0, samples_per_cycle: int = 80, oversample: int = 10) -> np.ndarray:
    """Моменты [0, ΔT/2] с шагом дискретизации, уменьшенным в oversample раз"""
    steps = (samples_per_cycle // 2) * oversample
    return np.arange(steps + 1) / (samples_per_cycle * oversample * frequency)


def max_terminal_current(fault_type: FaultType, l_f: float, R_f: float, line: LineParameters,
                         src: SourceImpedance, phasors: SourcePhasors, i1_0: float, frequency: float = 50.0,
                         samples_per_cycle: int = 80, oversample: int = 10,
                         llg_table_value: bool = False) -> float:
    """max |i1(t)| расчётной моды на первом полупериоде после КЗ"""
    net = build_mode_network(fault_type, l_f, R_f, line, src, llg_table_value)
    i_f = solve_fault_current(net, net.u_seq(_as_complex(phasors.u_s1), _as_complex(phasors.u_s2)), frequency)
    i1 = solve_terminal_current(net, i_f, phasors.u_s1, i1_0)
    return float(np.max(np.abs(i1(half_cycle_grid(frequency, samples_per_cycle, oversample)))))


def max_terminal_current_grid(fault_type: FaultType, lf_grid, rf_grid, line: LineParameters,
                              src: SourceImpedance, phasors: SourcePhasors, i1_0: float,
                              frequency: float = 50.0, samples_per_cycle: int = 80, oversample: int = 10,
                              llg_table_value: bool = False) -> np.ndarray:
    """
    Поверхность max |i1| на сетке (l_f, R_f), форма (len(lf_grid), len(rf_grid)).

    Raises:
        InvalidNetworkError: Узлы сетки вне линии или неположительные R_f
    """
    fault_type = FaultType(fault_type)
    lf_grid = np.asarray(lf_grid, dtype=np.float64)
    rf_grid = np.asarray(rf_grid, dtype=np.float64)
    if lf_grid.size == 0 or rf_grid.size == 0:
        raise InvalidNetworkError("Пустая сетка l_f или R_f")
    _check_network_inputs(fault_type, float(lf_grid.min()), float(rf_grid.min()), line)
    _check_network_inputs(fault_type, float(lf_grid.max()), float(rf_grid.max()), line)

    omega = 2.0 * math.pi * frequency
    u_s1, u_s2 = _as_complex(phasors.u_s1), _as_complex(phasors.u_s2)
    t = half_cycle_grid(frequency, samples_per_cycle, oversample)
    surface = np.empty((lf_grid.size, rf_grid.size))
    for start in range(0, lf_grid.size, GRID_CHUNK_ROWS):
        rows = lf_grid[start:start + GRID_CHUNK_ROWS, None]
        p = _network_arrays(fault_type, rows, rf_grid[None, :], line, src, llg_table_value)
        shape = np.broadcast_shapes(np.shape(p["R1"]), np.shape(p["R2"]))
        R1, L1, R2, L2, R4, L4, w1, w2 = (np.broadcast_to(p[k], shape)
                                          for k in ("R1", "L1", "R2", "L2", "R4", "L4", "w1", "w2"))
        B1, _, B3, amplitude, A_step2 = _terminal_coefficients(R1, L1, R2, L2, R4, L4, w1 * u_s1 + w2 * u_s2,
                                                                u_s1, omega)
        waveform = _terminal_waveform(B1, B3, amplitude, A_step2, i1_0, t, omega)
        surface[start:start + rows.shape[0]] = np.max(np.abs(waveform), axis=-1)
    logger.debug(f"Поверхность max|i1|: {surface.shape}, диапазон [{surface.min():.4g}, {surface.max():.4g}] А")
    return surface


def _trapezoid_first_order(B: float, forcing: np.ndarray, x0: float, h: float) -> np.ndarray:
    x = np.empty_like(forcing)
    x[0] = x0
    a, b = 1.0 - 0.5 * B * h, 1.0 + 0.5 * B * h
    for n in range(len(forcing) - 1):
        x[n + 1] = (a * x[n] + 0.5 * h * (forcing[n] + forcing[n + 1])) / b
    return x


def integrate_mode_network(net: ModeNetwork, phasors: SourcePhasors, i1_0: float, t_end: float,
                           dt: float = 1e-6, frequency: float = 50.0, full_network: bool = False) -> ModeIntegration:
    """
    Численное интегрирование цепи моды методом трапеций.

    full_network=False интегрирует приведённую цепь тока КЗ и уравнение ветви местного
    конца; full_network=True интегрирует исходную цепь из трёх ветвей (i2(0) = −i1_0).
    """
    omega = 2.0 * math.pi * frequency
    t = np.arange(int(round(t_end / dt)) + 1) * dt
    u_s1 = np.real(SQRT2 * _as_complex(phasors.u_s1) * np.exp(1j * omega * t))
    u_s2 = np.real(SQRT2 * _as_complex(phasors.u_s2) * np.exp(1j * omega * t))

    if not full_network:
        i_f = _trapezoid_first_order(net.R1 / net.L1, net.u_seq(u_s1, u_s2) / net.L1, 0.0, dt)
        di_f = (net.u_seq(u_s1, u_s2) - net.R1 * i_f) / net.L1
        forcing = (u_s1 - net.R4 * i_f - net.L4 * di_f) / net.L2
        i1 = _trapezoid_first_order(net.R2 / net.L2, forcing, i1_0, dt)
        return ModeIntegration(t, i_f, i1)

    inductance = np.array([[net.L2 + net.L4, net.L4], [net.L4, net.L3 + net.L4]])
    resistance = np.array([[net.R2 + net.R4, net.R4], [net.R4, net.R3 + net.R4]])
    lhs = np.linalg.inv(inductance + 0.5 * dt * resistance)
    rhs = inductance - 0.5 * dt * resistance
    sources = np.vstack([u_s1, u_s2])
    state = np.empty((2, t.size))
    state[:, 0] = (i1_0, -i1_0)
    for n in range(t.size - 1):
        state[:, n + 1] = lhs @ (rhs @ state[:, n] + 0.5 * dt * (sources[:, n] + sources[:, n + 1]))
    return ModeIntegration(t, state[0] + state[1], state[0])
