from pydantic import BaseModel, Field, field_validator, model_validator

from models.line import ComplexValue, SourceImpedance
from models.records import FaultType


class ImpedanceCondition(BaseModel):
    """Результат МНК-оценки сопротивления системы в одной моде."""
    mode: str = Field(..., description="Мода (alpha, beta, zero)")
    R_ohm: float = Field(..., ge=0.0, description="Активное сопротивление, Ом")
    L_h: float = Field(..., gt=0.0, description="Индуктивность, Гн")
    residual_norm: float = Field(..., ge=0.0, description="Норма невязки МНК, В")
    condition_number: float = Field(..., description="Число обусловленности нормальной матрицы")
    r_clamped: bool = Field(False, description="Отрицательное R заменено нулём")


class ParameterEstimate(BaseModel):
    """Оценка параметров системы и КЗ по однократной записи."""
    fault_type: FaultType = Field(..., description="Канонический вид КЗ")
    permutation: tuple[int, int, int] = Field((0, 1, 2), description="Поворот фаз исходной записи")
    mode: str = Field(..., description="Расчётная воздушная мода")
    Zs_aerial: ComplexValue = Field(..., description="Сопротивление системы, воздушная мода, Ом")
    Zs_zero: ComplexValue | None = Field(None, description="Сопротивление системы, нулевая мода, Ом")
    loading_deg: float = Field(..., gt=-180.0, le=180.0, description="Угол нагрузки: удалённый минус местный")
    fia_deg: float = Field(..., ge=0.0, lt=360.0, description="Угол включения КЗ, град")
    rf_range: tuple[float, float] = Field(..., description="Диапазон переходного сопротивления, Ом")
    rf_upper_clipped: bool = Field(False, description="Верхняя граница R_f совпала с краем сетки")
    t_f_index: int = Field(..., ge=0, description="Отсчёт возникновения КЗ")
    t_0_index: float = Field(..., ge=0.0, description="Последний переход напряжения через ноль до t_f")
    meas_peak_a: float = Field(..., ge=0.0, description="max|i1| расчётной моды на полупериоде после КЗ, А, с учётом peak_scale")
    peak_scale: float = Field(1.0, gt=0.0, description="Множитель пикового тока: √1,5 для инвариантной по мощности формы")
    i1_0: float = Field(..., description="Ток расчётной моды в момент t_f, А")
    u_s1: ComplexValue = Field(..., description="ЭДС местного источника в расчётной моде (t_f), В")
    u_s2: ComplexValue = Field(..., description="ЭДС удалённого источника в расчётной моде (t_f), В")
    condition_report: list[ImpedanceCondition] = Field(default_factory=list)
    frequency: float = Field(50.0, description="Номинальная частота, Гц")

    @field_validator("rf_range")
    @classmethod
    def check_rf_range(cls, v: tuple[float, float]) -> tuple[float, float]:
        if v[0] < 0 or v[0] > v[1]:
            raise ValueError(f"Некорректный диапазон R_f: {v}")
        return v

    @model_validator(mode="after")
    def check_fault_type(self) -> "ParameterEstimate":
        if not self.fault_type.is_canonical:
            raise ValueError("Вид КЗ в оценке должен быть каноническим")
        return self

    def source_impedance(self) -> SourceImpedance:
        """Сопротивление системы; без оценки нулевой моды она принимается равной воздушной"""
        z_zero = self.Zs_zero if self.Zs_zero is not None else self.Zs_aerial
        return SourceImpedance.from_complex(self.Zs_aerial, z_zero, self.frequency)
