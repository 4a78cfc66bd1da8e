import math
from itertools import product

from pydantic import BaseModel, Field, field_validator, model_validator

from models.line import ComplexValue, LineParameters, SourceImpedance
from models.records import FaultType

MANIFEST_VERSION = 1


class EventSpec(BaseModel):
    """Параметры одного моделируемого КЗ на линии с двумя источниками."""
    fault_type: FaultType
    l_f: float = Field(..., gt=0, description="Место КЗ от местного конца, км")
    R_f: float = Field(..., gt=0, description="Переходное сопротивление, Ом")
    fia_deg: float = Field(..., description="Угол включения КЗ, град")
    loading_deg: float = Field(..., description="Угол нагрузки: удалённый минус местный, град")
    Zs_local: SourceImpedance
    Zs_remote: SourceImpedance
    line: LineParameters
    voltage_kv: float = Field(..., gt=0, description="Номинальное линейное напряжение, кВ")
    n_pi_sections: int | None = Field(None, ge=2, description="Пи-звеньев с каждой стороны от места КЗ")
    dt_sim: float = Field(20e-6, gt=0, le=50e-6, description="Шаг интегрирования, с")
    frequency: float = Field(50.0, description="Номинальная частота, Гц")
    samples_per_cycle: int = Field(80, gt=0)
    warmup_cycles: float = Field(2.0, ge=2.0)
    pre_fault_cycles: float = Field(2.0, ge=1.0)
    post_fault_cycles: float = Field(1.0, ge=0.5)
    anti_alias_hz: float = Field(1600.0, ge=0.0, description="Срез фильтра перед прореживанием, Гц, 0 - без фильтра")

    @model_validator(mode="after")
    def check_location(self) -> "EventSpec":
        if not self.l_f < self.line.length_km:
            raise ValueError(f"Место КЗ {self.l_f} км вне линии длиной {self.line.length_km} км")
        return self

    @property
    def sections_per_side(self) -> int:
        if self.n_pi_sections is not None:
            return self.n_pi_sections
        return max(4, math.ceil(self.line.length_km / 25.0))


class SourceSet(BaseModel):
    """Пара модальных сопротивлений системы (оба конца одинаковы)."""
    z_aerial: ComplexValue
    z_zero: ComplexValue

    def impedance(self, frequency: float = 50.0) -> SourceImpedance:
        return SourceImpedance.from_complex(self.z_aerial, self.z_zero, frequency)


class SweepConfig(BaseModel):
    """Сетка параметров полной группы данных."""
    line: LineParameters
    voltage_kv: float = Field(..., gt=0)
    frequency: float = Field(50.0)
    fault_types: list[FaultType] = Field(default_factory=lambda: [FaultType.AG])
    source_sets: list[SourceSet] = Field(default_factory=list)
    loading_deg: list[float] = Field(default_factory=list)
    rf_ohm: list[float] = Field(default_factory=list, description="Переходные сопротивления для всех видов КЗ")
    rf_high_ohm: list[float] = Field(default_factory=list, description="Дополнительные R_f только для однофазных КЗ")
    lf_km: list[float] = Field(default_factory=list)
    fia_deg: list[float] = Field(default_factory=list)
    n_pi_sections: int | None = Field(None, ge=2)
    dt_sim: float = Field(20e-6, gt=0, le=50e-6)

    @field_validator("fault_types")
    @classmethod
    def check_fault_types(cls, v: list[FaultType]) -> list[FaultType]:
        if any(not ft.is_canonical for ft in v):
            raise ValueError("Группа строится только для канонических видов КЗ (AG, BC, BCG, ABC)")
        if len(set(v)) != len(v):
            raise ValueError("Виды КЗ в сетке повторяются")
        return v

    @field_validator("rf_ohm", "rf_high_ohm")
    @classmethod
    def check_resistances(cls, v: list[float]) -> list[float]:
        if any(r <= 0 for r in v):
            raise ValueError("Переходные сопротивления сетки должны быть положительными")
        return v

    @model_validator(mode="after")
    def check_locations(self) -> "SweepConfig":
        if any(not 0 < l_f < self.line.length_km for l_f in self.lf_km):
            raise ValueError("Узлы сетки места КЗ должны лежать внутри линии")
        return self

    def rf_axis(self, fault_type: FaultType) -> list[float]:
        if FaultType(fault_type).canonical is FaultType.AG:
            return self.rf_ohm + self.rf_high_ohm
        return list(self.rf_ohm)

    def axes(self, fault_type: FaultType) -> dict[str, list]:
        """Оси сетки в порядке нумерации событий"""
        return {
            "source_sets": list(self.source_sets),
            "loading_deg": list(self.loading_deg),
            "rf_ohm": self.rf_axis(fault_type),
            "lf_km": list(self.lf_km),
            "fia_deg": list(self.fia_deg),
        }

    def shape(self, fault_type: FaultType) -> tuple[int, ...]:
        return tuple(len(axis) for axis in self.axes(fault_type).values())

    def cardinality(self, fault_type: FaultType) -> int:
        return math.prod(self.shape(fault_type))

    def spec_index(self, fault_type: FaultType, coordinates: tuple[int, ...]) -> int:
        """Плоский индекс события по индексам осей (последняя ось меняется быстрее)"""
        index = 0
        for position, size in zip(coordinates, self.shape(fault_type)):
            index = index * size + position
        return index

    def coordinates(self, fault_type: FaultType, spec_index: int) -> tuple[int, ...]:
        shape = self.shape(fault_type)
        coordinates = []
        for size in reversed(shape):
            spec_index, position = divmod(spec_index, size)
            coordinates.append(position)
        return tuple(reversed(coordinates))

    def event_spec(self, fault_type: FaultType, spec_index: int, **overrides) -> EventSpec:
        """Параметры события по плоскому индексу"""
        s, ld, rf, lf, fia = self.coordinates(fault_type, spec_index)
        axes = self.axes(fault_type)
        source = axes["source_sets"][s].impedance(self.frequency)
        values = dict(
            fault_type=fault_type, l_f=axes["lf_km"][lf], R_f=axes["rf_ohm"][rf], fia_deg=axes["fia_deg"][fia],
            loading_deg=axes["loading_deg"][ld], Zs_local=source, Zs_remote=source, line=self.line,
            voltage_kv=self.voltage_kv, n_pi_sections=self.n_pi_sections, dt_sim=self.dt_sim,
            frequency=self.frequency,
        )
        values.update(overrides)
        return EventSpec(**values)

    def indices(self, fault_type: FaultType, selection: dict[str, list[int]] | None = None) -> list[int]:
        """Плоские индексы декартовой подсетки (по умолчанию вся сетка)"""
        shape = self.shape(fault_type)
        selection = selection or {}
        ranges = [selection.get(name, range(size)) for name, size in zip(self.axes(fault_type), shape)]
        return [self.spec_index(fault_type, coordinates) for coordinates in product(*ranges)]


class ShardEntry(BaseModel):
    file: str
    count: int = Field(..., ge=0)
    first_index: int = Field(..., ge=0)
    last_index: int = Field(..., ge=0)
    sha256: str


class QuarantineEntry(BaseModel):
    spec_index: int
    error: str


class FaultTypeGroup(BaseModel):
    """Шарды и карантин одного вида КЗ."""
    fault_type: FaultType
    expected_count: int = Field(..., ge=0)
    shards: list[ShardEntry] = Field(default_factory=list)
    quarantined: list[QuarantineEntry] = Field(default_factory=list)

    @property
    def record_count(self) -> int:
        return sum(shard.count for shard in self.shards)

    @model_validator(mode="after")
    def check_counts(self) -> "FaultTypeGroup":
        if self.record_count + len(self.quarantined) != self.expected_count:
            raise ValueError(
                f"{self.fault_type.value}: записей {self.record_count} + карантин {len(self.quarantined)} "
                f"не равно размеру сетки {self.expected_count}"
            )
        return self


class DataGroupManifest(BaseModel):
    """Описание полной группы данных: сетка, шарды, базы нормировки."""
    format_version: int = Field(MANIFEST_VERSION)
    sweep: SweepConfig
    groups: list[FaultTypeGroup] = Field(default_factory=list)
    voltage_base: float = Field(..., gt=0, description="База напряжения (амплитуда фазного), В")
    current_base: float = Field(..., gt=0, description="База тока (перцентиль |i| группы), А")

    @field_validator("format_version")
    @classmethod
    def check_version(cls, v: int) -> int:
        if v != MANIFEST_VERSION:
            raise ValueError(f"Неподдерживаемая версия манифеста: {v}")
        return v

    @property
    def record_count(self) -> int:
        return sum(group.record_count for group in self.groups)

    def group(self, fault_type: FaultType) -> FaultTypeGroup | None:
        for group in self.groups:
            if group.fault_type is FaultType(fault_type):
                return group
        return None


class TargetSelection(BaseModel):
    """Подсетка полной группы, выбранная по оценкам параметров."""
    fault_type: FaultType
    source_set_indices: list[int]
    loading_indices: list[int]
    rf_indices: list[int]
    lf_indices: list[int]
    fia_indices: list[int]
    source_sets: list[SourceSet] = Field(default_factory=list)
    loading_deg: list[float] = Field(default_factory=list)
    rf_ohm: list[float] = Field(default_factory=list)
    lf_km: list[float] = Field(default_factory=list)
    fia_deg: list[float] = Field(default_factory=list)

    def as_axes_selection(self) -> dict[str, list[int]]:
        return {
            "source_sets": self.source_set_indices,
            "loading_deg": self.loading_indices,
            "rf_ohm": self.rf_indices,
            "lf_km": self.lf_indices,
            "fia_deg": self.fia_indices,
        }

    @property
    def size(self) -> int:
        return math.prod(len(v) for v in self.as_axes_selection().values())
