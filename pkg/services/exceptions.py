from contextlib import contextmanager
from typing import Iterator


class FaultLocationError(Exception):
    """Базовое исключение для сервисного слоя"""

    exit_code: int = 1

    def __init__(self, message: str = "", *, stage: str | None = None):
        super().__init__(message)
        self.stage = stage

    def __str__(self) -> str:
        message = super().__str__()
        if self.stage:
            return f"[{self.stage}] {message}"
        return message


# Ошибки входных данных (код выхода 2)

class InputDataError(FaultLocationError):
    """Некорректные входные данные"""
    exit_code = 2


class RecordFormatError(InputDataError):
    """Синтаксическая ошибка в файле записи (с номером строки)"""

    def __init__(self, message: str, line_number: int | None = None, **kwargs):
        if line_number is not None:
            message = f"строка {line_number}: {message}"
        super().__init__(message, **kwargs)
        self.line_number = line_number


class RecordStructureError(InputDataError):
    """Несогласованность структуры cfg и dat"""
    pass


class UnsupportedRevisionError(InputDataError):
    """Неподдерживаемая ревизия COMTRADE"""
    pass


class ChannelIdentificationError(InputDataError):
    """Не удалось однозначно определить фазные каналы"""
    pass


class SamplingRateError(InputDataError):
    """Частота дискретизации не подходит для операции"""
    pass


class WindowingError(InputDataError):
    """Недостаточно данных для окна 81×6"""
    pass


class SignalLengthError(InputDataError):
    """Слишком короткий сигнал"""
    pass


class PhasorWindowError(InputDataError):
    """Окно фазора выходит за границы записи"""
    pass


class UnknownFaultTypeError(InputDataError):
    """Неизвестный вид повреждения"""
    pass


class InvalidNetworkError(InputDataError):
    """Недопустимые параметры схемы замещения"""
    pass


class ConfigurationError(InputDataError):
    """Ошибка конфигурации"""
    pass


# Ошибки оценивания параметров (код выхода 3)

class EstimationError(FaultLocationError):
    """Ошибка оценивания параметров"""
    exit_code = 3


class NoFaultDetectedError(EstimationError):
    """Момент возникновения КЗ не обнаружен"""
    pass


class ZeroCrossingNotFoundError(EstimationError):
    """Переход напряжения через ноль не найден"""
    pass


class IllConditionedError(EstimationError):
    """Плохо обусловленная задача МНК"""

    def __init__(self, message: str, condition_number: float, **kwargs):
        super().__init__(message, **kwargs)
        self.condition_number = condition_number


class EstimationFailedError(EstimationError):
    """Физически недопустимый результат оценки"""
    pass


class NoVoltageError(EstimationError):
    """Напряжение на выводах слишком мало"""
    pass


class FiaOrderingError(EstimationError):
    """Нарушен порядок t_0 < t_f"""
    pass


class RangeNotFoundError(EstimationError):
    """Не найден допустимый диапазон переходного сопротивления"""

    def __init__(self, message: str, nearest_miss: dict | None = None, **kwargs):
        super().__init__(message, **kwargs)
        self.nearest_miss = nearest_miss or {}


class TakagiIndeterminateError(EstimationError):
    """Знаменатель формулы Такаги близок к нулю"""
    pass


class SelectionError(EstimationError):
    """Пустая выборка целевого датасета"""

    def __init__(self, message: str, diagnostics: dict | None = None, **kwargs):
        super().__init__(message, **kwargs)
        self.diagnostics = diagnostics or {}


# Ошибки моделирования

class SimulationError(FaultLocationError):
    """Ошибка электромагнитного моделирования"""
    pass


class SingularNetworkError(SimulationError):
    """Вырожденная матрица проводимостей"""
    pass


class SimulationFailedError(SimulationError):
    """Расходимость интегрирования"""

    def __init__(self, message: str, spec_echo: dict | None = None, **kwargs):
        super().__init__(message, **kwargs)
        self.spec_echo = spec_echo or {}


# Ошибки хранилища датасета

class DatasetError(FaultLocationError):
    """Ошибка работы с группой данных"""
    pass


class ShardFormatError(DatasetError):
    """Повреждённый или несовместимый шард"""
    exit_code = 2


class DatasetTooSmallError(DatasetError):
    """Слишком мало образцов для разбиения"""
    exit_code = 2


class GroupGenerationError(DatasetError):
    """Слишком много событий в карантине"""
    pass


class InsufficientDiskSpaceError(DatasetError):
    """Недостаточно места на диске"""
    exit_code = 2


# Ошибки обучения (код выхода 4)

class TrainingError(FaultLocationError):
    """Ошибка обучения нейросети"""
    exit_code = 4


class TrainingDivergedError(TrainingError):
    """Нечисловое значение функции потерь"""

    def __init__(self, message: str, epoch: int, **kwargs):
        super().__init__(message, **kwargs)
        self.epoch = epoch


class DimensionMismatchError(TrainingError):
    """Размерность данных не совпадает с архитектурой"""
    pass


class RepetitionFailureError(TrainingError):
    """Слишком много расходящихся повторов обучения"""
    pass


@contextmanager
def stage_scope(stage: str) -> Iterator[None]:
    """Пометить ошибки сервисного слоя, возникшие внутри блока, меткой этапа"""
    try:
        yield
    except FaultLocationError as e:
        if e.stage is None:
            e.stage = stage
        raise
