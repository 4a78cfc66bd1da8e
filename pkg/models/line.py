import math
from typing import Annotated, Any

import numpy as np
from pydantic import BaseModel, BeforeValidator, ConfigDict, Field, PlainSerializer, model_validator


def _to_complex(value: Any) -> complex:
    if isinstance(value, complex):
        return value
    if isinstance(value, (int, float)):
        return complex(value)
    if isinstance(value, str):
        return complex(value.replace(" ", "").replace("i", "j"))
    if isinstance(value, dict):
        return complex(value.get("re", 0.0), value.get("im", 0.0))
    if isinstance(value, (list, tuple)) and len(value) == 2:
        return complex(float(value[0]), float(value[1]))
    raise ValueError(f"Не удалось интерпретировать комплексное значение: {value!r}")


# Комплексное число: принимает [re, im], {"re", "im"}, "1+5j"; сериализуется в [re, im]
ComplexValue = Annotated[
    complex,
    BeforeValidator(_to_complex),
    PlainSerializer(lambda z: [z.real, z.imag], return_type=list),
]


def balanced_matrix(self_value: float, mutual_value: float) -> np.ndarray:
    """Симметричная 3×3 матрица (собственные на диагонали, взаимные вне её)"""
    matrix = np.full((3, 3), mutual_value, dtype=np.float64)
    np.fill_diagonal(matrix, self_value)
    return matrix


class LineParameters(BaseModel):
    """
    Погонные параметры линии в фазных и последовательностных величинах.

    Достаточно задать одну из групп (фазную или последовательностную),
    вторая вычисляется. Если заданы обе, они должны согласовываться в пределах 1%.
    """

    model_config = ConfigDict(frozen=True)

    length_km: float = Field(..., gt=0, description="Длина линии, км")
    rated_kv: float | None = Field(None, gt=0, description="Номинальное линейное напряжение, кВ")
    Rs_km: float | None = Field(None, description="Собственное активное сопротивление, Ом/км")
    Rm_km: float | None = Field(None, description="Взаимное активное сопротивление, Ом/км")
    Ls_km: float | None = Field(None, description="Собственная индуктивность, Гн/км")
    Lm_km: float | None = Field(None, description="Взаимная индуктивность, Гн/км")
    Cs_km: float | None = Field(None, description="Собственная ёмкость, Ф/км")
    Cm_km: float | None = Field(None, description="Взаимная ёмкость, Ф/км")
    R0_km: float | None = Field(None, description="Сопротивление нулевой последовательности, Ом/км")
    R1_km: float | None = Field(None, description="Сопротивление прямой последовательности, Ом/км")
    L0_km: float | None = Field(None, description="Индуктивность нулевой последовательности, Гн/км")
    L1_km: float | None = Field(None, description="Индуктивность прямой последовательности, Гн/км")
    C0_km: float | None = Field(None, description="Ёмкость нулевой последовательности, Ф/км")
    C1_km: float | None = Field(None, description="Ёмкость прямой последовательности, Ф/км")

    @model_validator(mode="before")
    @classmethod
    def complete_groups(cls, data: Any) -> Any:
        if not isinstance(data, dict):
            return data
        data = dict(data)
        for quantity in ("R", "L", "C"):
            s, m = f"{quantity}s_km", f"{quantity}m_km"
            zero, pos = f"{quantity}0_km", f"{quantity}1_km"
            has_phase = data.get(s) is not None and data.get(m) is not None
            has_sequence = data.get(zero) is not None and data.get(pos) is not None
            if has_phase and not has_sequence:
                data[pos] = data[s] - data[m]
                data[zero] = data[s] + 2.0 * data[m]
            elif has_sequence and not has_phase:
                data[s] = (data[zero] + 2.0 * data[pos]) / 3.0
                data[m] = (data[zero] - data[pos]) / 3.0
            elif not has_phase and not has_sequence:
                raise ValueError(f"Не заданы параметры {quantity} ни в фазных, ни в последовательностных величинах")
        return data

    @model_validator(mode="after")
    def check_invariants(self) -> "LineParameters":
        if not self.Rs_km > abs(self.Rm_km):
            raise ValueError("Требуется Rs > |Rm|")
        if not self.Ls_km > abs(self.Lm_km) > 0:
            raise ValueError("Требуется Ls > |Lm| > 0")
        if self.Cs_km <= 0:
            raise ValueError("Собственная ёмкость должна быть положительной")
        for quantity in ("R", "L", "C"):
            s = getattr(self, f"{quantity}s_km")
            m = getattr(self, f"{quantity}m_km")
            for derived, given in (
                (s - m, getattr(self, f"{quantity}1_km")),
                (s + 2.0 * m, getattr(self, f"{quantity}0_km")),
            ):
                if abs(derived - given) > 0.01 * abs(given):
                    raise ValueError(
                        f"Фазные и последовательностные параметры {quantity} не согласованы: "
                        f"{derived:.6g} против {given:.6g}"
                    )
        return self

    @classmethod
    def from_sequence(cls, length_km: float, R0_km: float, R1_km: float, L0_km: float, L1_km: float,
                      C0_km: float, C1_km: float, rated_kv: float | None = None) -> "LineParameters":
        return cls(length_km=length_km, rated_kv=rated_kv, R0_km=R0_km, R1_km=R1_km,
                   L0_km=L0_km, L1_km=L1_km, C0_km=C0_km, C1_km=C1_km)

    @classmethod
    def from_phase(cls, length_km: float, Rs_km: float, Rm_km: float, Ls_km: float, Lm_km: float,
                   Cs_km: float, Cm_km: float, rated_kv: float | None = None) -> "LineParameters":
        return cls(length_km=length_km, rated_kv=rated_kv, Rs_km=Rs_km, Rm_km=Rm_km,
                   Ls_km=Ls_km, Lm_km=Lm_km, Cs_km=Cs_km, Cm_km=Cm_km)

    @property
    def R_phase(self) -> np.ndarray:
        return balanced_matrix(self.Rs_km, self.Rm_km)

    @property
    def L_phase(self) -> np.ndarray:
        return balanced_matrix(self.Ls_km, self.Lm_km)

    @property
    def C_phase(self) -> np.ndarray:
        return balanced_matrix(self.Cs_km, self.Cm_km)

    def z_aerial_km(self, frequency: float) -> complex:
        return complex(self.R1_km, 2.0 * math.pi * frequency * self.L1_km)

    def z_zero_km(self, frequency: float) -> complex:
        return complex(self.R0_km, 2.0 * math.pi * frequency * self.L0_km)

    def y_aerial_km(self, frequency: float) -> complex:
        return complex(0.0, 2.0 * math.pi * frequency * self.C1_km)

    def scaled(self, factor: float) -> "LineParameters":
        """Копия с погонными параметрами, умноженными на factor"""
        per_km = {
            name: getattr(self, name) * factor
            for name in ("Rs_km", "Rm_km", "Ls_km", "Lm_km", "Cs_km", "Cm_km",
                         "R0_km", "R1_km", "L0_km", "L1_km", "C0_km", "C1_km")
        }
        return LineParameters(length_km=self.length_km, rated_kv=self.rated_kv, **per_km)


class SourceImpedance(BaseModel):
    """Эквивалентное сопротивление системы в модах (α и β совпадают)."""

    model_config = ConfigDict(frozen=True)

    R_aerial: float = Field(..., ge=0, description="Активное сопротивление воздушной моды, Ом")
    L_aerial: float = Field(..., gt=0, description="Индуктивность воздушной моды, Гн")
    R_zero: float = Field(..., ge=0, description="Активное сопротивление нулевой моды, Ом")
    L_zero: float = Field(..., gt=0, description="Индуктивность нулевой моды, Гн")

    @classmethod
    def from_complex(cls, z_aerial: complex, z_zero: complex, frequency: float = 50.0) -> "SourceImpedance":
        omega = 2.0 * math.pi * frequency
        return cls(
            R_aerial=z_aerial.real,
            L_aerial=z_aerial.imag / omega,
            R_zero=z_zero.real,
            L_zero=z_zero.imag / omega,
        )

    def z_aerial(self, frequency: float = 50.0) -> complex:
        return complex(self.R_aerial, 2.0 * math.pi * frequency * self.L_aerial)

    def z_zero(self, frequency: float = 50.0) -> complex:
        return complex(self.R_zero, 2.0 * math.pi * frequency * self.L_zero)

    def phase_matrices(self) -> tuple[np.ndarray, np.ndarray]:
        """Фазные матрицы R и L из модальных значений (обратное преобразование Кларк)"""
        r_self = (self.R_zero + 2.0 * self.R_aerial) / 3.0
        r_mutual = (self.R_zero - self.R_aerial) / 3.0
        l_self = (self.L_zero + 2.0 * self.L_aerial) / 3.0
        l_mutual = (self.L_zero - self.L_aerial) / 3.0
        return balanced_matrix(r_self, r_mutual), balanced_matrix(l_self, l_mutual)
