"""
Обучение сети мини-батчами, предсказание и повторные запуски.

Метки нормируются на длину линии. Базы напряжения и тока, которыми
нормированы окна, хранятся вместе с моделью. Повторные запуски с
разными зёрнами выполняются в пуле процессов.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from sklearn.utils import gen_batches

from app.metrics import record_training_run
from app.workers.pool import WorkerPool
from ml.network import INPUT_SIZE, MLP, Adam, MlpConfig
from services.dataset import SampleSet, split_train_val
from services.exceptions import (
    DatasetTooSmallError,
    DimensionMismatchError,
    RepetitionFailureError,
    TrainingDivergedError,
)

logger = logging.getLogger(__name__)


@dataclass
class EpochLoss:
    epoch: int
    train_loss: float
    val_loss: float


@dataclass
class TrainedModel:
    """Обученная сеть с базами нормировки и журналом обучения."""
    network: MLP
    config: MlpConfig
    line_length_km: float
    voltage_base: float = 1.0
    current_base: float = 1.0
    history: list[EpochLoss] = field(default_factory=list)

    @property
    def final_train_loss(self) -> float | None:
        return self.history[-1].train_loss if self.history else None

    @property
    def final_val_loss(self) -> float | None:
        return self.history[-1].val_loss if self.history else None


def flatten_windows(X: np.ndarray) -> np.ndarray:
    """Окна (n, 81, 6) или (81, 6) в строки длины 486 (построчно)"""
    X = np.asarray(X, dtype=np.float64)
    if X.size % INPUT_SIZE or X.ndim not in (1, 2, 3):
        raise DimensionMismatchError(f"Окно формы {X.shape} не приводится к вектору {INPUT_SIZE}")
    return X.reshape(-1, INPUT_SIZE)


def train(train_set: SampleSet, val_set: SampleSet, config: MlpConfig, line_length_km: float, *,
          voltage_base: float = 1.0, current_base: float = 1.0) -> TrainedModel:
    """
    Обучение мини-батчами ровно config.epochs эпох.

    Метки в км нормируются на длину линии. Проверочная выборка только
    контролируется, ранней остановки нет.

    Raises:
        DimensionMismatchError: Размер окна не совпадает со входом сети
        TrainingDivergedError: Потери стали нечисловыми
    """
    X_train = flatten_windows(train_set.X)
    X_val = flatten_windows(val_set.X)
    if X_train.shape[1] != config.input_size:
        raise DimensionMismatchError(f"Вход сети {config.input_size}, окно {X_train.shape[1]}")
    y_train = np.asarray(train_set.y, dtype=np.float64) / line_length_km
    y_val = np.asarray(val_set.y, dtype=np.float64) / line_length_km

    network = MLP.initialize(config.layer_sizes, seed=config.seed)
    optimizer = Adam(learning_rate=config.learning_rate)
    rng = np.random.default_rng(config.seed)
    n = len(X_train)
    history: list[EpochLoss] = []

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        weighted_loss = 0.0
        for batch in gen_batches(n, config.batch_size):
            index = order[batch]
            loss, gradients = network.gradients(X_train[index], y_train[index])
            if not np.isfinite(loss):
                raise TrainingDivergedError(f"Нечисловые потери на эпохе {epoch}", epoch=epoch)
            optimizer.step(network.parameters, gradients)
            weighted_loss += loss * len(index)
        val_loss = network.loss(X_val, y_val) if len(X_val) else float("nan")
        history.append(EpochLoss(epoch=epoch, train_loss=weighted_loss / n, val_loss=val_loss))
        if epoch == 1 or epoch == config.epochs:
            logger.debug(f"Эпоха {epoch}: train {weighted_loss / n:.3e}, val {val_loss:.3e}")

    if not all(np.all(np.isfinite(p)) for p in network.parameters):
        raise TrainingDivergedError("Нечисловые веса после обучения", epoch=config.epochs)
    return TrainedModel(network=network, config=config, line_length_km=line_length_km,
                        voltage_base=voltage_base, current_base=current_base, history=history)


def predict(model: TrainedModel, window: np.ndarray) -> float | np.ndarray:
    """
    Расстояние до места КЗ, км, в пределах [0, длина линии].

    window - нормированное окно (81, 6) или пачка окон (n, 81, 6).
    """
    window = np.asarray(window)
    single = window.ndim in (1, 2)
    output = model.network.forward(flatten_windows(window))
    km = np.clip(output * model.line_length_km, 0.0, model.line_length_km)
    return float(km[0]) if single else km


@dataclass(frozen=True)
class _RepetitionTask:
    X: np.ndarray
    y: np.ndarray
    window: np.ndarray
    config: MlpConfig
    line_length_km: float
    fraction: float


@dataclass
class RepeatedLocation:
    """Итог многократной локализации: среднее и распределение по повторам."""
    predictions: np.ndarray
    seeds: list[int]
    diverged: list[int] = field(default_factory=list)

    @property
    def mean_km(self) -> float:
        return float(np.mean(self.predictions))

    @property
    def std_km(self) -> float:
        return float(np.std(self.predictions))


def _run_repetition(task: _RepetitionTask) -> tuple[int, float | None, str | None]:
    seed = task.config.seed
    try:
        train_set, val_set = split_train_val(task.X, task.y, fraction=task.fraction, seed=seed)
        model = train(train_set, val_set, task.config, task.line_length_km)
    except TrainingDivergedError as e:
        return seed, None, str(e)
    return seed, predict(model, task.window), None


def locate_repeated(X: np.ndarray, y: np.ndarray, window: np.ndarray, config: MlpConfig,
                    line_length_km: float, n: int = 10, *, fraction: float = 0.8, workers: int = 1,
                    divergence_limit: float = 0.1) -> RepeatedLocation:
    """
    n независимых обучений с зёрнами seed…seed+n−1 и новым разбиением в каждом.

    Raises:
        DatasetTooSmallError: Выборка меньше допустимой
        RepetitionFailureError: Доля расходящихся повторов больше divergence_limit
    """
    if n < 1:
        raise RepetitionFailureError(f"Число повторов должно быть ≥ 1, получено {n}")
    if len(X) < 10:
        raise DatasetTooSmallError(f"В выборке {len(X)} записей")
    tasks = [
        _RepetitionTask(X=X, y=y, window=window, config=config.model_copy(update={"seed": config.seed + k}),
                        line_length_km=line_length_km, fraction=fraction)
        for k in range(n)
    ]
    logger.info(f"Локализация: {n} повторов на {len(X)} записях, процессов {workers}")
    with WorkerPool(workers) as pool:
        outcomes = sorted(pool.map(_run_repetition, tasks), key=lambda outcome: outcome[0])

    diverged = [seed for seed, _, error in outcomes if error is not None]
    record_training_run(True, n - len(diverged))
    record_training_run(False, len(diverged))
    for seed, _, error in outcomes:
        if error is not None:
            logger.warning(f"Повтор с зерном {seed} разошёлся: {error}")
    if len(diverged) > divergence_limit * n or len(diverged) == n:
        raise RepetitionFailureError(f"Разошлось {len(diverged)} из {n} повторов")

    seeds = [seed for seed, prediction, _ in outcomes if prediction is not None]
    predictions = np.array([prediction for _, prediction, _ in outcomes if prediction is not None])
    result = RepeatedLocation(predictions=predictions, seeds=seeds, diverged=diverged)
    logger.info(f"Среднее {result.mean_km:.3f} км, СКО {result.std_km:.3f} км")
    return result
