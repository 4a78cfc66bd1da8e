from enum import Enum

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


PHASE_CHANNELS = ("va", "vb", "vc", "ia", "ib", "ic")
# Порядок столбцов окна 81×6
WINDOW_COLUMNS = ("ia", "ib", "ic", "va", "vb", "vc")
WINDOW_HALF = 40
WINDOW_ROWS = 2 * WINDOW_HALF + 1


class FaultFamily(str, Enum):
    """Класс повреждения"""
    SLG = "SLG"
    LL = "LL"
    LLG = "LLG"
    THREE_PHASE = "3PH"


class FaultType(str, Enum):
    """Вид повреждения по фазам"""
    AG = "AG"
    BG = "BG"
    CG = "CG"
    AB = "AB"
    BC = "BC"
    CA = "CA"
    ABG = "ABG"
    BCG = "BCG"
    CAG = "CAG"
    ABC = "ABC"

    @property
    def canonical(self) -> "FaultType":
        return _CANONICAL[self][0]

    @property
    def permutation(self) -> tuple[int, int, int]:
        """Индексы исходных фаз, попадающих в новые A, B, C"""
        return _CANONICAL[self][1]

    @property
    def family(self) -> FaultFamily:
        return _FAMILY[self.canonical]

    @property
    def is_canonical(self) -> bool:
        return self.canonical is self

    @property
    def involves_ground(self) -> bool:
        return self.family in (FaultFamily.SLG, FaultFamily.LLG)


_CANONICAL: dict[FaultType, tuple[FaultType, tuple[int, int, int]]] = {
    FaultType.AG: (FaultType.AG, (0, 1, 2)),
    FaultType.BG: (FaultType.AG, (1, 2, 0)),
    FaultType.CG: (FaultType.AG, (2, 0, 1)),
    FaultType.BC: (FaultType.BC, (0, 1, 2)),
    FaultType.CA: (FaultType.BC, (1, 2, 0)),
    FaultType.AB: (FaultType.BC, (2, 0, 1)),
    FaultType.BCG: (FaultType.BCG, (0, 1, 2)),
    FaultType.CAG: (FaultType.BCG, (1, 2, 0)),
    FaultType.ABG: (FaultType.BCG, (2, 0, 1)),
    FaultType.ABC: (FaultType.ABC, (0, 1, 2)),
}

_FAMILY: dict[FaultType, FaultFamily] = {
    FaultType.AG: FaultFamily.SLG,
    FaultType.BC: FaultFamily.LL,
    FaultType.BCG: FaultFamily.LLG,
    FaultType.ABC: FaultFamily.THREE_PHASE,
}

CANONICAL_TYPES = (FaultType.AG, FaultType.BC, FaultType.BCG, FaultType.ABC)


def _as_readonly_array(value) -> np.ndarray:
    array = np.array(value, dtype=np.float64, copy=True)
    array.setflags(write=False)
    return array


class WaveformRecord(BaseModel):
    """Однократная запись напряжений и токов на одном конце линии."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    station_id: str = Field(default="", description="Идентификатор подстанции/регистратора")
    base_frequency: float = Field(..., description="Номинальная частота, Гц")
    sample_rate: float = Field(..., gt=0, description="Частота дискретизации, отсчётов/с")
    t: np.ndarray = Field(..., description="Моменты отсчётов, с")
    va: np.ndarray
    vb: np.ndarray
    vc: np.ndarray
    ia: np.ndarray
    ib: np.ndarray
    ic: np.ndarray
    trigger_index: int | None = Field(None, ge=0, description="Индекс отсчёта пуска регистратора")

    @field_validator("t", "va", "vb", "vc", "ia", "ib", "ic", mode="before")
    @classmethod
    def to_array(cls, v) -> np.ndarray:
        array = _as_readonly_array(v)
        if array.ndim != 1:
            raise ValueError("Канал должен быть одномерным массивом")
        return array

    @field_validator("base_frequency")
    @classmethod
    def check_frequency(cls, v: float) -> float:
        if v not in (50.0, 60.0):
            raise ValueError(f"Номинальная частота должна быть 50 или 60 Гц, получено {v}")
        return v

    @model_validator(mode="after")
    def check_channels(self) -> "WaveformRecord":
        n = len(self.t)
        lengths = {name: len(getattr(self, name)) for name in PHASE_CHANNELS}
        if any(length != n for length in lengths.values()):
            raise ValueError(f"Длины каналов не совпадают: t={n}, {lengths}")
        if n < 2 * self.samples_per_cycle:
            raise ValueError(f"Запись короче двух периодов: {n} отсчётов")
        step = 1.0 / self.sample_rate
        if np.max(np.abs(np.diff(self.t) - step)) > 1e-6 * step:
            raise ValueError("Шаг дискретизации неравномерен (более 1 ppm)")
        return self

    @property
    def n_samples(self) -> int:
        return len(self.t)

    @property
    def dt(self) -> float:
        return 1.0 / self.sample_rate

    @property
    def samples_per_cycle(self) -> float:
        return self.sample_rate / self.base_frequency

    @property
    def voltages(self) -> np.ndarray:
        """Фазные напряжения, форма (3, N)"""
        return np.vstack([self.va, self.vb, self.vc])

    @property
    def currents(self) -> np.ndarray:
        """Фазные токи, форма (3, N)"""
        return np.vstack([self.ia, self.ib, self.ic])

    def channel(self, name: str) -> np.ndarray:
        return getattr(self, name)

    def replace(self, **changes) -> "WaveformRecord":
        """Новая запись с заменёнными полями (с повторной валидацией)"""
        values = {name: getattr(self, name) for name in type(self).model_fields}
        values.update(changes)
        return type(self)(**values)


class SampleMatrix(BaseModel):
    """Окно 81×6 вокруг момента КЗ, столбцы [iA, iB, iC, uA, uB, uC]."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    data: np.ndarray
    fault_index: int = Field(default=WINDOW_HALF, description="Строка момента t_f")
    label_km: float | None = Field(None, gt=0, description="Расстояние до места КЗ (только для обучения)")

    @field_validator("data", mode="before")
    @classmethod
    def to_array(cls, v) -> np.ndarray:
        return _as_readonly_array(v)

    @model_validator(mode="after")
    def check_shape(self) -> "SampleMatrix":
        if self.data.shape != (WINDOW_ROWS, len(WINDOW_COLUMNS)):
            raise ValueError(f"Ожидалась матрица {WINDOW_ROWS}×6, получено {self.data.shape}")
        if self.fault_index != WINDOW_HALF:
            raise ValueError(f"fault_index должен быть {WINDOW_HALF}")
        return self

    def flatten(self) -> np.ndarray:
        """Вектор 486 в построчном порядке"""
        return self.data.reshape(-1)
