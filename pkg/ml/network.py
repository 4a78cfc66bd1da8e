"""
Полносвязная сеть для регрессии расстояния до места КЗ.

Скрытые слои с ReLU, выход линейный, функция потерь - среднеквадратичная.
Веса хранятся в виде (выходы, входы), прямой проход x·Wᵀ + b.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from pydantic import BaseModel, Field, field_validator

from models.records import WINDOW_COLUMNS, WINDOW_ROWS
from services.exceptions import DimensionMismatchError

logger = logging.getLogger(__name__)

INPUT_SIZE = WINDOW_ROWS * len(WINDOW_COLUMNS)


class MlpConfig(BaseModel):
    """Архитектура и гиперпараметры обучения."""
    hidden_layers: list[int] = Field(default=[256, 128, 64, 32, 16], description="Размеры скрытых слоёв")
    learning_rate: float = Field(0.001, gt=0.0)
    batch_size: int = Field(128, gt=0)
    epochs: int = Field(70, gt=0)
    seed: int = Field(0, ge=0)
    input_size: int = Field(INPUT_SIZE, gt=0)

    @field_validator("hidden_layers")
    @classmethod
    def check_hidden_layers(cls, v: list[int]) -> list[int]:
        if any(size <= 0 for size in v):
            raise ValueError("Размеры скрытых слоёв должны быть положительными")
        return v

    @property
    def layer_sizes(self) -> list[int]:
        return [self.input_size, *self.hidden_layers, 1]


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(0.0, x)


def relu_backward(activation: np.ndarray, delta: np.ndarray) -> np.ndarray:
    return (activation > 0) * delta


@dataclass
class MLP:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @classmethod
    def initialize(cls, layer_sizes: list[int], seed: int = 0) -> "MLP":
        """Равномерная инициализация в ±1/√fan_in, смещения нулевые"""
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            bound = 1.0 / math.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases)

    def __post_init__(self):
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape[0] != b.shape[0]:
                raise DimensionMismatchError(f"Слой {k}: {w.shape} не согласован со смещением {b.shape}")
            if k and w.shape[1] != self.weights[k - 1].shape[0]:
                raise DimensionMismatchError(f"Слой {k}: вход {w.shape[1]} ≠ выход предыдущего слоя")

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[1], *(w.shape[0] for w in self.weights)]

    @property
    def parameters(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    def copy(self) -> "MLP":
        return MLP([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def _check_input(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.ndim != 2 or X.shape[1] != self.layer_sizes[0]:
            raise DimensionMismatchError(f"Ожидался вход размерности {self.layer_sizes[0]}, получено {X.shape}")
        return X

    def forward(self, X: np.ndarray, keep_activations: bool = False):
        """Выход формы (n,); при keep_activations ещё и активации всех слоёв"""
        activation = self._check_input(X)
        activations = [activation]
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = activation.dot(w.T) + b
            activation = z if k == last else relu(z)
            activations.append(activation)
        output = activation[:, 0]
        if keep_activations:
            return output, activations
        return output

    def loss(self, X: np.ndarray, y: np.ndarray) -> float:
        prediction = self.forward(X)
        return float(np.mean((prediction - np.asarray(y, dtype=np.float64)) ** 2))

    def gradients(self, X: np.ndarray, y: np.ndarray) -> tuple[float, list[np.ndarray]]:
        """Потери и градиенты в порядке parameters (сначала веса, затем смещения)"""
        prediction, activations = self.forward(X, keep_activations=True)
        y = np.asarray(y, dtype=np.float64)
        n = len(y)
        error = prediction - y
        delta = (2.0 / n * error)[:, None]
        grad_w: list[np.ndarray] = [np.empty(0)] * len(self.weights)
        grad_b: list[np.ndarray] = [np.empty(0)] * len(self.biases)
        for k in reversed(range(len(self.weights))):
            grad_w[k] = delta.T.dot(activations[k])
            grad_b[k] = delta.sum(axis=0)
            if k:
                delta = relu_backward(activations[k], delta.dot(self.weights[k]))
        return float(np.mean(error ** 2)), [*grad_w, *grad_b]


@dataclass
class Adam:
    """Оптимизатор с адаптивными моментами, обновляет параметры на месте."""
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    _m: list[np.ndarray] = field(default_factory=list)
    _v: list[np.ndarray] = field(default_factory=list)

    def step(self, parameters: list[np.ndarray], gradients: list[np.ndarray]) -> None:
        if not self._m:
            self._m = [np.zeros_like(p) for p in parameters]
            self._v = [np.zeros_like(p) for p in parameters]
        self.step_count += 1
        correction1 = 1.0 - self.beta1 ** self.step_count
        correction2 = 1.0 - self.beta2 ** self.step_count
        for p, g, m, v in zip(parameters, gradients, self._m, self._v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + self.eps)


def kink_margin(model: MLP, X: np.ndarray) -> np.ndarray:
    """Наименьший |z| скрытых слоёв для каждого примера (расстояние до излома ReLU)"""
    _, activations = model.forward(X, keep_activations=True)
    margin = np.full(len(activations[0]), np.inf)
    for k in range(len(model.weights) - 1):
        z = activations[k].dot(model.weights[k].T) + model.biases[k]
        margin = np.minimum(margin, np.abs(z).min(axis=1))
    return margin


def gradient_check(model: MLP, X: np.ndarray, y: np.ndarray, step: float = 1e-4, kink_factor: float = 10.0) -> float:
    """
    Наибольшая относительная ошибка аналитического градиента по параметрам
    против центральной конечной разности.

    Примеры, у которых скрытый нейрон ближе к излому ReLU, чем
    kink_factor·step·max(1, max|X|), исключаются: возмущение параметра
    перешло бы через излом, и разность не сходилась бы к производной.
    """
    X = model._check_input(X)
    y = np.asarray(y, dtype=np.float64)
    reach = kink_factor * step * max(1.0, float(np.abs(X).max(initial=0.0)))
    keep = kink_margin(model, X) > reach
    if not keep.any():
        raise ValueError("Все примеры лежат у излома ReLU, проверка градиента невозможна")
    if not keep.all():
        logger.debug(f"Проверка градиента: исключено {int((~keep).sum())} примеров у излома ReLU")
    X, y = X[keep], y[keep]
    _, analytic = model.gradients(X, y)
    worst = 0.0
    for parameter, gradient in zip(model.parameters, analytic):
        numeric = np.empty_like(parameter)
        for index in np.ndindex(parameter.shape):
            original = parameter[index]
            parameter[index] = original + step
            plus = model.loss(X, y)
            parameter[index] = original - step
            minus = model.loss(X, y)
            parameter[index] = original
            numeric[index] = (plus - minus) / (2.0 * step)
        scale = np.linalg.norm(gradient) + np.linalg.norm(numeric)
        if scale > 0:
            worst = max(worst, float(np.linalg.norm(gradient - numeric) / scale))
    logger.debug(f"Проверка градиента: относительная ошибка {worst:.3e}")
    return worst
