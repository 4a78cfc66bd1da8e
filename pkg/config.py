try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any

from pydantic import Field, ValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict

from services.exceptions import ConfigurationError


class AppSettings(BaseSettings):
    """Общие настройки приложения"""

    app_name: str = Field(default="Single-Ended Fault Locator", description="Название приложения")
    app_version: str = Field(default="1.0.0", description="Версия приложения")
    log_level: str = Field(default="INFO", description="Уровень логирования")
    seed: int = Field(default=0, description="Главный seed для всех стохастических этапов")
    workers: int = Field(default=1, ge=1, description="Число процессов в пуле воркеров")

    model_config = SettingsConfigDict(
        env_prefix="APP_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore"
    )


class SignalSettings(BaseSettings):
    """Настройки обработки сигналов"""

    samples_per_cycle: int = Field(default=80, gt=0, description="Отсчётов на период после передискретизации")
    k_ff: float = Field(default=1.5, gt=1.0, description="Коэффициент порога по производной тока")
    noise_floor_ratio: float = Field(
        default=0.01,
        ge=0.0,
        description="Нижняя граница порога для моды относительно максимальной доаварийной производной",
    )

    model_config = SettingsConfigDict(
        env_prefix="SIGNAL_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore"
    )


class EstimationSettings(BaseSettings):
    """Настройки оценивания параметров"""

    margin_c: float = Field(default=0.05, gt=0.0, lt=1.0, description="Допуск c по пиковому току")
    rf_min_ohm: float = Field(default=0.01, gt=0.0, description="Нижняя граница сетки R_f")
    rf_max_ohm: float = Field(default=500.0, gt=0.0, description="Верхняя граница сетки R_f")
    rf_points: int = Field(default=200, ge=2, description="Число логарифмических точек сетки R_f")
    lf_step_km: float = Field(default=1.0, gt=0.0, description="Шаг сетки места КЗ, км")
    max_condition: float = Field(default=1e8, gt=1.0, description="Предельное число обусловленности МНК")
    oversample: int = Field(default=10, ge=1, description="Кратность передискретизации при поиске максимума")
    llg_table_value: bool = Field(
        default=False,
        description="Использовать R_f/2 для двухфазного КЗ на землю вместо R_f",
    )
    lowpass_hz: float = Field(
        default=400.0, ge=0.0, description="Частота среза фильтра аварийных составляющих перед МНК, 0 - без фильтра"
    )
    line_charging: bool = Field(default=True, description="Учитывать ёмкость линии (пи-звено) при расчёте ЭДС")
    power_invariant_peak: bool = Field(
        default=True,
        description="Пиковый ток моды в инвариантной по мощности форме (×√1,5), для измерения и модели одинаково",
    )

    model_config = SettingsConfigDict(
        env_prefix="ESTIMATION_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore"
    )


class SimulationSettings(BaseSettings):
    """Настройки ЭМП-моделирования"""

    dt_sim_s: float = Field(default=20e-6, gt=0.0, le=50e-6, description="Шаг интегрирования, с")
    warmup_cycles: float = Field(default=2.0, ge=2.0, description="Периоды прогрева до записи")
    pre_fault_cycles: float = Field(default=2.0, ge=1.0, description="Периоды записи до КЗ")
    post_fault_cycles: float = Field(default=1.0, ge=0.5, description="Периоды записи после КЗ")
    anti_alias_hz: float = Field(
        default=1600.0, ge=0.0, description="Срез фильтра регистратора перед прореживанием, Гц, 0 - без фильтра"
    )
    divergence_energy_ratio: float = Field(
        default=1e6, gt=1.0, description="Допустимый рост запасённой энергии относительно доаварийной"
    )

    model_config = SettingsConfigDict(
        env_prefix="SIM_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore"
    )


class DatasetSettings(BaseSettings):
    """Настройки группы данных"""

    shard_size: int = Field(default=4096, gt=0, description="Записей в одном шарде")
    current_percentile: float = Field(default=99.5, gt=0.0, le=100.0, description="Перцентиль |i| для базы тока")
    quarantine_limit: float = Field(default=0.01, ge=0.0, description="Допустимая доля событий в карантине")
    fia_lag_deg: float = Field(default=9.0, ge=0.0, description="Поправка на запаздывание обнаружения при выборе УВК")
    train_fraction: float = Field(default=0.8, gt=0.0, lt=1.0, description="Доля обучающей выборки")

    model_config = SettingsConfigDict(
        env_prefix="DATASET_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore"
    )


class MLSettings(BaseSettings):
    """Настройки нейросети"""

    hidden_layers: list[int] = Field(default=[256, 128, 64, 32, 16], description="Размеры скрытых слоёв")
    learning_rate: float = Field(default=0.001, gt=0.0, description="Скорость обучения Adam")
    batch_size: int = Field(default=128, gt=0, description="Размер мини-батча")
    epochs: int = Field(default=70, gt=0, description="Число эпох")
    repetitions: int = Field(default=10, ge=1, description="Число повторов локализации")
    divergence_limit: float = Field(default=0.1, ge=0.0, description="Допустимая доля расходящихся повторов")
    model_path: str = Field(default="model.flmp", description="Путь к файлу модели")

    model_config = SettingsConfigDict(
        env_prefix="ML_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore"
    )


class SentrySettings(BaseSettings):
    """Настройки Sentry"""

    dsn: str = Field(default="", description="Sentry DSN")
    traces_sample_rate: float = Field(default=1.0, description="Доля трейсинга (0..1)")
    environment: str = Field(default="development", description="Окружение для Sentry")
    enabled: bool = Field(default=False, description="Включить отправку ошибок в Sentry")

    model_config = SettingsConfigDict(
        env_prefix="SENTRY_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore"
    )


_SECTIONS: dict[str, type[BaseSettings]] = {
    "app": AppSettings,
    "signals": SignalSettings,
    "estimation": EstimationSettings,
    "simulation": SimulationSettings,
    "dataset": DatasetSettings,
    "ml": MLSettings,
    "sentry": SentrySettings,
}


class Settings:
    """Глобальные настройки приложения"""

    def __init__(self, overrides: dict[str, dict[str, Any]] | None = None):
        overrides = overrides or {}
        unknown = set(overrides) - set(_SECTIONS)
        if unknown:
            raise ConfigurationError(f"Неизвестные секции конфигурации: {sorted(unknown)}")
        try:
            self.app = AppSettings(**overrides.get("app", {}))
            self.signals = SignalSettings(**overrides.get("signals", {}))
            self.estimation = EstimationSettings(**overrides.get("estimation", {}))
            self.simulation = SimulationSettings(**overrides.get("simulation", {}))
            self.dataset = DatasetSettings(**overrides.get("dataset", {}))
            self.ml = MLSettings(**overrides.get("ml", {}))
            self.sentry = SentrySettings(**overrides.get("sentry", {}))
        except ValidationError as e:
            raise ConfigurationError(f"Некорректная конфигурация: {e}") from e

    def echo(self) -> dict[str, dict[str, Any]]:
        """Снимок конфигурации для отчёта (без секретов)"""
        return {
            name: getattr(self, name).model_dump(mode="json")
            for name in _SECTIONS
            if name != "sentry"
        }


def load_toml_overrides(path: str | Path) -> dict[str, dict[str, Any]]:
    """Прочитать TOML-файл конфигурации в словарь секций"""
    try:
        with open(path, "rb") as f:
            data = tomllib.load(f)
    except FileNotFoundError as e:
        raise ConfigurationError(f"Файл конфигурации не найден: {path}") from e
    except tomllib.TOMLDecodeError as e:
        raise ConfigurationError(f"Ошибка разбора TOML {path}: {e}") from e
    return {key: value for key, value in data.items() if isinstance(value, dict)}


def merge_overrides(*layers: dict[str, dict[str, Any]]) -> dict[str, dict[str, Any]]:
    """Слить несколько слоёв переопределений, последние имеют приоритет"""
    merged: dict[str, dict[str, Any]] = {}
    for layer in layers:
        for section, values in layer.items():
            merged.setdefault(section, {}).update(values)
    return merged


# Глобальный экземпляр настроек (синглтон)
_settings: Settings | None = None


def get_settings() -> Settings:
    """Получить экземпляр настроек (синглтон)"""
    global _settings
    if _settings is None:
        _settings = Settings()
    return _settings


def configure_settings(
    toml_path: str | Path | None = None,
    overrides: dict[str, dict[str, Any]] | None = None,
) -> Settings:
    """Пересобрать синглтон настроек из TOML-файла и переопределений CLI"""
    global _settings
    file_layer = load_toml_overrides(toml_path) if toml_path else {}
    _settings = Settings(merge_overrides(file_layer, overrides or {}))
    return _settings
