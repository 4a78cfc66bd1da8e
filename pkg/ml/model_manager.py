import csv
import json
import logging
import struct
from pathlib import Path
from threading import Lock
from typing import Optional

import numpy as np

from ml.network import MLP, MlpConfig
from ml.training import EpochLoss, TrainedModel
from services.exceptions import DimensionMismatchError

logger = logging.getLogger(__name__)


class ModelManager:
    """
    Синглтон для хранения обученных сетей.

    Инкапсулирует:
    - Сохранение/загрузку модели (JSON-заголовок + веса float32)
    - Кэш загруженных моделей по пути
    - Журнал обучения в CSV
    """

    MAGIC = b"FLMP"
    FORMAT_VERSION = 1
    PREFIX = struct.Struct("<4sHI")

    _instance: Optional['ModelManager'] = None
    _lock: Lock = Lock()

    def __new__(cls):
        if cls._instance is None:
            with cls._lock:
                if cls._instance is None:
                    cls._instance = super().__new__(cls)
                    cls._instance._initialized = False
        return cls._instance

    def __init__(self):
        """Инициализация выполняется только один раз"""
        if self._initialized:
            return
        self._cache: dict[Path, TrainedModel] = {}
        self._initialized = True
        logger.info("ModelManager инициализирован")

    def save(self, model: TrainedModel, path: str | Path) -> Path:
        """Сохранить модель: сигнатура, версия, длина заголовка, JSON-заголовок, веса"""
        path = Path(path)
        header = {
            "layer_sizes": model.network.layer_sizes,
            "config": model.config.model_dump(mode="json"),
            "line_length_km": model.line_length_km,
            "voltage_base": model.voltage_base,
            "current_base": model.current_base,
            "history": [[h.epoch, h.train_loss, h.val_loss] for h in model.history],
        }
        header_bytes = json.dumps(header, allow_nan=True).encode("utf-8")
        blob = np.concatenate([p.ravel() for p in model.network.parameters]).astype("<f4").tobytes()
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as f:
            f.write(self.PREFIX.pack(self.MAGIC, self.FORMAT_VERSION, len(header_bytes)))
            f.write(header_bytes)
            f.write(blob)
        with self._lock:
            self._cache[path.resolve()] = model
        logger.info(f"Модель сохранена в {path}")
        return path

    def load(self, path: str | Path) -> TrainedModel:
        path = Path(path)
        key = path.resolve()
        with self._lock:
            if key in self._cache:
                return self._cache[key]
        model = self._load_from_file(path)
        with self._lock:
            self._cache[key] = model
        return model

    def _load_from_file(self, path: Path) -> TrainedModel:
        """Разобрать файл модели (PRIVATE)"""
        raw = path.read_bytes()
        magic, version, header_length = self.PREFIX.unpack_from(raw)
        if magic != self.MAGIC or version != self.FORMAT_VERSION:
            raise DimensionMismatchError(f"{path}: не файл модели версии {self.FORMAT_VERSION}")
        offset = self.PREFIX.size
        header = json.loads(raw[offset:offset + header_length].decode("utf-8"))
        values = np.frombuffer(raw, dtype="<f4", offset=offset + header_length).astype(np.float64)

        sizes = header["layer_sizes"]
        weight_shapes = [(fan_out, fan_in) for fan_in, fan_out in zip(sizes[:-1], sizes[1:])]
        expected = sum(a * b for a, b in weight_shapes) + sum(sizes[1:])
        if values.size != expected:
            raise DimensionMismatchError(f"{path}: ожидалось {expected} параметров, найдено {values.size}")
        weights, position = [], 0
        for shape in weight_shapes:
            count = shape[0] * shape[1]
            weights.append(values[position:position + count].reshape(shape))
            position += count
        biases = []
        for size in sizes[1:]:
            biases.append(values[position:position + size].copy())
            position += size

        logger.info(f"Модель загружена из {path}")
        return TrainedModel(
            network=MLP(weights, biases),
            config=MlpConfig.model_validate(header["config"]),
            line_length_km=header["line_length_km"],
            voltage_base=header["voltage_base"],
            current_base=header["current_base"],
            history=[EpochLoss(epoch=e, train_loss=t, val_loss=v) for e, t, v in header["history"]],
        )

    @staticmethod
    def write_training_log(model: TrainedModel, path: str | Path) -> Path:
        """Журнал потерь по эпохам в CSV"""
        path = Path(path)
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["epoch", "train_loss", "val_loss"])
            for h in model.history:
                writer.writerow([h.epoch, f"{h.train_loss:.9g}", f"{h.val_loss:.9g}"])
        return path

    def unload(self) -> None:
        """Очистить кэш моделей"""
        with self._lock:
            self._cache.clear()
        logger.info("Кэш моделей очищен")


# Глобальная функция для получения экземпляра
def get_model_manager() -> ModelManager:
    """Получить экземпляр ModelManager (синглтон)"""
    return ModelManager()
