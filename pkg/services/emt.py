"""
Электромагнитное моделирование линии с двумя источниками.

Схема: ветви источников R-L (фазные матрицы из модальных значений), каскад
связанных пи-звеньев по обе стороны от узла КЗ, шунт КЗ в узле n. Интегрирование
методом трапеций через эквивалентные схемы ветвей (проводимость плюс источник тока
предыстории) с LU-разложением узловой матрицы.
Узлы: 0 - местные шины, n - место КЗ, 2n - удалённые шины.
"""
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, block_diag, lu_factor, lu_solve
from scipy.signal import butter, sosfiltfilt

from models.dataset import EventSpec
from models.records import FaultType, WaveformRecord
from services.exceptions import SimulationFailedError, SingularNetworkError
from services.signals import CLARKE_INVERSE, MODES, fia_reference_mode

logger = logging.getLogger(__name__)

SQRT2 = math.sqrt(2.0)
PHASE_SHIFT = np.exp(-1j * np.deg2rad([0.0, 120.0, -120.0]))
_PHASE_INDEX = {"A": 0, "B": 1, "C": 2}
# отсчётов записи, моделируемых сверх неё с каждой стороны для фильтра
ANTI_ALIAS_PAD_SAMPLES = 10


@dataclass(frozen=True)
class LadderNetwork:
    """
    Трёхфазная лестничная схема.

    branch_nodes[b] = (откуда, куда); −1 в позиции «откуда» означает ЭДС источника
    branch_source[b]. Ёмкости заданы по узлам матрицами 3×3.
    """
    n_nodes: int
    branch_nodes: np.ndarray
    branch_source: np.ndarray
    R: np.ndarray
    L: np.ndarray
    C_nodes: np.ndarray
    sources: np.ndarray
    frequency: float = 50.0
    fault_node: int | None = None

    @property
    def n_branches(self) -> int:
        return len(self.branch_nodes)

    @property
    def size(self) -> int:
        return 3 * self.n_nodes

    def incidence(self) -> np.ndarray:
        """Матрица соединений ветвей и узлов (3B × 3N) с блоками ±I"""
        A = np.zeros((self.n_branches, self.n_nodes))
        for b, (start, end) in enumerate(self.branch_nodes):
            if start >= 0:
                A[b, start] = 1.0
            A[b, end] = -1.0
        return np.kron(A, np.eye(3))

    def source_vector(self, values: np.ndarray) -> np.ndarray:
        """Вектор ЭДС по ветвям (3B,) из значений источников (S, 3)"""
        s = np.zeros((self.n_branches, 3), dtype=values.dtype)
        mask = self.branch_source >= 0
        s[mask] = values[self.branch_source[mask]]
        return s.reshape(-1)

    def capacitance_matrix(self) -> np.ndarray:
        return block_diag(*self.C_nodes)


@dataclass(frozen=True)
class NodePhasors:
    node_voltages: np.ndarray
    branch_currents: np.ndarray
    capacitor_currents: np.ndarray


def fault_conductance_stamp(fault_type: FaultType | str, R_f: float) -> np.ndarray:
    """
    Фазная матрица проводимости КЗ.

    Замыкания на землю: R_f от каждой повреждённой фазы на землю. Междуфазные:
    R_f между фазами. Трёхфазное: треугольник R_f между всеми парами фаз.
    """
    fault_type = FaultType(fault_type)
    if R_f <= 0:
        raise SimulationFailedError(f"Переходное сопротивление должно быть положительным: {R_f}")
    G = 1.0 / R_f
    phases = [_PHASE_INDEX[p] for p in fault_type.value.rstrip("G")]
    stamp = np.zeros((3, 3))
    if fault_type.involves_ground:
        for p in phases:
            stamp[p, p] += G
        return stamp
    for k, p in enumerate(phases):
        for q in phases[k + 1:]:
            stamp[p, p] += G
            stamp[q, q] += G
            stamp[p, q] -= G
            stamp[q, p] -= G
    return stamp


def source_phasors(spec: EventSpec) -> np.ndarray:
    """Фазные ЭДС источников (2, 3), действующие значения; нагрузка поровну на оба конца"""
    magnitude = spec.voltage_kv * 1e3 / math.sqrt(3.0)
    half = math.radians(spec.loading_deg) / 2.0
    local = magnitude * np.exp(-1j * half) * PHASE_SHIFT
    remote = magnitude * np.exp(1j * half) * PHASE_SHIFT
    return np.vstack([local, remote])


def build_ladder(spec: EventSpec) -> LadderNetwork:
    """Собрать лестничную схему события: n пи-звеньев на каждой стороне от места КЗ"""
    n = spec.sections_per_side
    line = spec.line
    lengths = [spec.l_f / n] * n + [(line.length_km - spec.l_f) / n] * n
    n_nodes = 2 * n + 1

    R_local, L_local = spec.Zs_local.phase_matrices()
    R_remote, L_remote = spec.Zs_remote.phase_matrices()
    R = [R_local] + [line.R_phase * length for length in lengths] + [R_remote]
    L = [L_local] + [line.L_phase * length for length in lengths] + [L_remote]
    branch_nodes = [(-1, 0)] + [(k, k + 1) for k in range(2 * n)] + [(-1, 2 * n)]
    branch_source = [0] + [-1] * (2 * n) + [1]

    C_nodes = np.zeros((n_nodes, 3, 3))
    for k, length in enumerate(lengths):
        half = line.C_phase * length / 2.0
        C_nodes[k] += half
        C_nodes[k + 1] += half

    return LadderNetwork(
        n_nodes=n_nodes,
        branch_nodes=np.array(branch_nodes, dtype=int),
        branch_source=np.array(branch_source, dtype=int),
        R=np.array(R),
        L=np.array(L),
        C_nodes=C_nodes,
        sources=source_phasors(spec),
        frequency=spec.frequency,
        fault_node=n,
    )


def steady_state_phasor_solve(network: LadderNetwork | EventSpec) -> NodePhasors:
    """
    Установившийся режим схемы без КЗ на номинальной частоте.

    Raises:
        SingularNetworkError: Вырожденная матрица узловых проводимостей
    """
    if isinstance(network, EventSpec):
        network = build_ladder(network)
    omega = 2.0 * math.pi * network.frequency
    A = network.incidence()
    branch_impedance = block_diag(*(r + 1j * omega * l for r, l in zip(network.R, network.L)))
    try:
        Y_branch = np.linalg.inv(branch_impedance)
    except np.linalg.LinAlgError as e:
        raise SingularNetworkError(f"Вырожденное сопротивление ветвей: {e}") from e
    Y_cap = 1j * omega * network.capacitance_matrix()
    s = network.source_vector(network.sources)
    Y = A.T @ Y_branch @ A + Y_cap
    try:
        V = np.linalg.solve(Y, -A.T @ Y_branch @ s)
    except np.linalg.LinAlgError as e:
        raise SingularNetworkError(f"Вырожденная матрица узловых проводимостей: {e}") from e
    I_branch = Y_branch @ (A @ V + s)
    return NodePhasors(
        node_voltages=V.reshape(network.n_nodes, 3),
        branch_currents=I_branch.reshape(network.n_branches, 3),
        capacitor_currents=(Y_cap @ V).reshape(network.n_nodes, 3),
    )


@dataclass
class TransientNetwork:
    """Пошаговый трапецеидальный интегратор лестничной схемы."""
    network: LadderNetwork
    dt: float
    sources_enabled: bool = True
    start_time: float = 0.0
    step_index: int = 0
    fault_stamp: np.ndarray | None = None
    _state: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        network = self.network
        self.A = network.incidence()
        self.omega = 2.0 * math.pi * network.frequency
        companion = network.R + 2.0 * network.L / self.dt
        self.G = block_diag(*np.linalg.inv(companion))
        self.K = block_diag(*(2.0 * network.L / self.dt - network.R))
        self.L_block = block_diag(*network.L)
        self.C = network.capacitance_matrix()
        self.G_C = 2.0 * self.C / self.dt
        self._base = self.A.T @ self.G @ self.A + self.G_C
        self._factorize()

    def _factorize(self):
        matrix = self._base.copy()
        if self.fault_stamp is not None:
            n = self.network.fault_node
            matrix[3 * n:3 * n + 3, 3 * n:3 * n + 3] += self.fault_stamp
        try:
            self._lu = lu_factor(matrix, check_finite=True)
        except (LinAlgError, ValueError) as e:
            raise SingularNetworkError(f"Вырожденная узловая матрица: {e}") from e
        pivots = np.abs(np.diag(self._lu[0]))
        if pivots.min() <= np.finfo(float).eps * pivots.max():
            raise SingularNetworkError("Вырожденная узловая матрица")

    def apply_fault(self, stamp: np.ndarray | None):
        """Включить (stamp) или отключить (None) шунт КЗ со следующего шага"""
        self.fault_stamp = stamp
        self._factorize()

    def source_values(self, t: float) -> np.ndarray:
        if not self.sources_enabled:
            return np.zeros(3 * self.network.n_branches)
        values = np.real(SQRT2 * self.network.sources * np.exp(1j * self.omega * t))
        return self.network.source_vector(values)

    def initialize(self, phasors: NodePhasors, t: float = 0.0):
        """Начальное состояние из установившегося режима в момент t"""
        rotation = SQRT2 * np.exp(1j * self.omega * t)
        V = np.real(phasors.node_voltages.reshape(-1) * rotation)
        i_branch = np.real(phasors.branch_currents.reshape(-1) * rotation)
        i_cap = np.real(phasors.capacitor_currents.reshape(-1) * rotation)
        self.start_time = t
        self.step_index = 0
        self._set_state(V, i_branch, i_cap, self.source_values(t))

    def _set_state(self, V, i_branch, i_cap, s):
        v_branch = self.A @ V + s
        self._state = {
            "V": V,
            "i": i_branch,
            "i_cap": i_cap,
            "h": self.G @ (v_branch + self.K @ i_branch),
            "h_cap": -(self.G_C @ V + i_cap),
        }

    def step(self):
        """Один шаг интегрирования"""
        self.step_index += 1
        s = self.source_values(self.time)
        state = self._state
        rhs = -self.A.T @ (self.G @ s + state["h"]) - state["h_cap"]
        V = lu_solve(self._lu, rhs)
        i_branch = self.G @ (self.A @ V + s) + state["h"]
        i_cap = self.G_C @ V + state["h_cap"]
        self._set_state(V, i_branch, i_cap, s)

    @property
    def time(self) -> float:
        return self.start_time + self.step_index * self.dt

    @property
    def node_voltages(self) -> np.ndarray:
        return self._state["V"].reshape(self.network.n_nodes, 3)

    @property
    def branch_currents(self) -> np.ndarray:
        return self._state["i"].reshape(self.network.n_branches, 3)

    def stored_energy(self) -> float:
        """Энергия индуктивностей и ёмкостей"""
        i, V = self._state["i"], self._state["V"]
        return float(0.5 * i @ self.L_block @ i + 0.5 * V @ self.C @ V)


def _reference_phase(spec: EventSpec, phasors: NodePhasors) -> float:
    """Угол (рад) модального напряжения местных шин, по которому отсчитывается УВК"""
    rotated = phasors.node_voltages[0][list(spec.fault_type.permutation)]
    mode = MODES.index(fia_reference_mode(spec.fault_type))
    return float(np.angle(CLARKE_INVERSE[mode] @ rotated))


def _spec_echo(spec: EventSpec) -> dict:
    return spec.model_dump(mode="json")


def simulate_event(spec: EventSpec, divergence_energy_ratio: float = 1e6) -> WaveformRecord:
    """
    Смоделировать КЗ и вернуть запись местного конца на 80 отсчётов за период.

    Запись начинается за pre_fault_cycles периодов до замыкания; отсчёт
    pre_fault_cycles·N совпадает с шагом замыкания и является последним доаварийным.
    Перед прореживанием до частоты записи сигналы шага интегрирования проходят
    фильтр Баттерворта без фазового сдвига со срезом anti_alias_hz (не выше 0,4
    частоты записи), как во входных цепях регистратора.

    Raises:
        SimulationFailedError: Расходимость интегрирования (рост энергии)
        SingularNetworkError: Вырожденная схема
    """
    n_cycle = spec.samples_per_cycle
    sample_period = 1.0 / (n_cycle * spec.frequency)
    steps_per_sample = math.ceil(sample_period / spec.dt_sim - 1e-9)
    dt = sample_period / steps_per_sample
    omega = 2.0 * math.pi * spec.frequency

    network = build_ladder(spec)
    phasors = steady_state_phasor_solve(network)
    k_fault = int(round(spec.pre_fault_cycles * n_cycle))
    n_samples = k_fault + int(round(spec.post_fault_cycles * n_cycle)) + 1

    # шаг замыкания: первый после прогрева и доаварийной части, где угол опорной моды равен УВК
    warmup_steps = int(math.ceil(spec.warmup_cycles * n_cycle)) * steps_per_sample
    earliest_step = warmup_steps + k_fault * steps_per_sample
    theta = _reference_phase(spec, phasors)
    t_min = earliest_step * dt
    lag = (math.radians(spec.fia_deg) - (omega * t_min + theta + math.pi / 2.0)) % (2.0 * math.pi)
    closing_step = max(int(round((t_min + lag / omega) / dt)), earliest_step)
    start_step = closing_step - k_fault * steps_per_sample
    last_step = start_step + (n_samples - 1) * steps_per_sample

    integrator = TransientNetwork(network, dt)
    integrator.initialize(phasors, 0.0)
    reference_energy = integrator.stored_energy()
    stamp = fault_conductance_stamp(spec.fault_type, spec.R_f)

    # запас шагов по краям записи под переходный процесс фильтра
    pad = ANTI_ALIAS_PAD_SAMPLES * steps_per_sample if spec.anti_alias_hz > 0 else 0
    first_step = max(start_step - pad, 0)
    fine_voltages = np.empty((last_step + pad - first_step + 1, 3))
    fine_currents = np.empty_like(fine_voltages)
    for step in range(last_step + pad + 1):
        if step > 0:
            if step == closing_step + 1:
                integrator.apply_fault(stamp)
            integrator.step()
        if step >= first_step:
            fine_voltages[step - first_step] = integrator.node_voltages[0]
            fine_currents[step - first_step] = integrator.branch_currents[0]
        if step % steps_per_sample == 0:
            energy = integrator.stored_energy()
            if not math.isfinite(energy) or energy > divergence_energy_ratio * reference_energy:
                logger.error(f"Расходимость моделирования на шаге {step}: энергия {energy:.4g} Дж")
                raise SimulationFailedError(
                    f"Расходимость интегрирования на шаге {step}", spec_echo=_spec_echo(spec)
                )

    if pad:
        cutoff = min(spec.anti_alias_hz, 0.4 * n_cycle * spec.frequency)
        sos = butter(4, cutoff, fs=1.0 / dt, output="sos")
        fine_voltages = sosfiltfilt(sos, fine_voltages, axis=0)
        fine_currents = sosfiltfilt(sos, fine_currents, axis=0)
    recorded = slice(start_step - first_step, start_step - first_step + n_samples * steps_per_sample, steps_per_sample)
    voltages, currents = fine_voltages[recorded], fine_currents[recorded]

    logger.debug(
        f"Событие {spec.fault_type.value} l_f={spec.l_f} км R_f={spec.R_f} Ом: шаг {dt * 1e6:.3f} мкс, "
        f"замыкание на шаге {closing_step}"
    )
    sample_rate = n_cycle * spec.frequency
    return WaveformRecord(
        station_id="sim",
        base_frequency=spec.frequency,
        sample_rate=sample_rate,
        t=np.arange(n_samples) / sample_rate,
        va=voltages[:, 0], vb=voltages[:, 1], vc=voltages[:, 2],
        ia=currents[:, 0], ib=currents[:, 1], ic=currents[:, 2],
        trigger_index=k_fault,
    )
