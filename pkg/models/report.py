import math

from pydantic import BaseModel, Field, field_validator

from models.dataset import TargetSelection
from models.estimation import ParameterEstimate
from models.records import FaultType


class TakagiPoint(BaseModel):
    """Оценка расстояния методом Такаги в один момент после КЗ."""
    time_ms: float = Field(..., description="Время от возникновения КЗ до конца окна, мс")
    distance_km: float | None = Field(None, description="Расстояние; None, если знаменатель вырожден")


class LocationDistribution(BaseModel):
    """Распределение расстояний по повторам обучения."""
    mean_km: float
    std_km: float = Field(..., ge=0.0)
    predictions_km: list[float]
    seeds: list[int]
    diverged_seeds: list[int] = Field(default_factory=list)
    dataset_size: int = Field(..., ge=0, description="Записей в выборке обучения")

    @field_validator("predictions_km")
    @classmethod
    def check_finite(cls, v: list[float]) -> list[float]:
        if any(not math.isfinite(x) for x in v):
            raise ValueError("Нечисловые оценки расстояния")
        return v


class FaultLocationReport(BaseModel):
    """Итог определения места КЗ по однократной записи."""
    fault_type: FaultType = Field(..., description="Вид КЗ, указанный пользователем")
    line_length_km: float = Field(..., gt=0)
    estimate: ParameterEstimate
    selection: TargetSelection | None = None
    proposed: LocationDistribution | None = None
    traditional: LocationDistribution | None = None
    takagi_loop: str | None = Field(None, description="Контур метода Такаги")
    takagi_timeline: list[TakagiPoint] = Field(default_factory=list)
    errors: dict[str, str] = Field(default_factory=dict, description="Ошибки необязательных этапов")
    config: dict = Field(default_factory=dict, description="Снимок конфигурации")
    # время этапов пишется в отдельный файл, отчёт остаётся побайтно воспроизводимым
    timings: dict[str, float] = Field(default_factory=dict, exclude=True)

    @property
    def proposed_km(self) -> float | None:
        return self.proposed.mean_km if self.proposed else None

    @property
    def traditional_km(self) -> float | None:
        return self.traditional.mean_km if self.traditional else None
