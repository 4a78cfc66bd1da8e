import hashlib
import logging
import struct
from pathlib import Path

import numpy as np

from models.records import WINDOW_COLUMNS, WINDOW_ROWS
from services.exceptions import ShardFormatError

logger = logging.getLogger(__name__)


class ShardStorage:
    """Storage для двоичных шардов с размеченными окнами 81×6."""

    MAGIC = b"FLDG"
    FORMAT_VERSION = 1
    HEADER = struct.Struct("<4sHI")
    RECORD_DTYPE = np.dtype([
        ("data", "<f4", (WINDOW_ROWS, len(WINDOW_COLUMNS))),
        ("label", "<f4"),
        ("spec_index", "<u4"),
    ])

    @classmethod
    def pack(cls, data: np.ndarray, labels: np.ndarray, spec_indices: np.ndarray) -> np.ndarray:
        """Собрать массив записей шарда"""
        data = np.asarray(data)
        if data.ndim != 3 or data.shape[1:] != cls.RECORD_DTYPE["data"].shape:
            raise ShardFormatError(f"Ожидались окна формы (n, {WINDOW_ROWS}, 6), получено {data.shape}")
        if not len(data) == len(labels) == len(spec_indices):
            raise ShardFormatError("Число окон, меток и индексов не совпадает")
        records = np.empty(len(data), dtype=cls.RECORD_DTYPE)
        records["data"] = data
        records["label"] = labels
        records["spec_index"] = spec_indices
        return records

    def write(self, path: str | Path, records: np.ndarray) -> str:
        """Записать шард, вернуть SHA-256 файла"""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        payload = self.HEADER.pack(self.MAGIC, self.FORMAT_VERSION, len(records)) + records.astype(
            self.RECORD_DTYPE, copy=False
        ).tobytes()
        tmp_path = path.with_suffix(path.suffix + ".tmp")
        tmp_path.write_bytes(payload)
        tmp_path.replace(path)
        logger.debug(f"Шард {path.name}: {len(records)} записей")
        return hashlib.sha256(payload).hexdigest()

    def read(self, path: str | Path) -> np.ndarray:
        """Прочитать все записи шарда"""
        raw = Path(path).read_bytes()
        if len(raw) < self.HEADER.size:
            raise ShardFormatError(f"{path}: файл короче заголовка")
        magic, version, count = self.HEADER.unpack_from(raw)
        if magic != self.MAGIC:
            raise ShardFormatError(f"{path}: неверная сигнатура {magic!r}")
        if version != self.FORMAT_VERSION:
            raise ShardFormatError(f"{path}: неподдерживаемая версия шарда {version}")
        expected = self.HEADER.size + count * self.RECORD_DTYPE.itemsize
        if len(raw) != expected:
            raise ShardFormatError(f"{path}: ожидалось {expected} байт, найдено {len(raw)}")
        return np.frombuffer(raw, dtype=self.RECORD_DTYPE, count=count, offset=self.HEADER.size)

    @staticmethod
    def checksum(path: str | Path) -> str | None:
        path = Path(path)
        if not path.exists():
            return None
        return hashlib.sha256(path.read_bytes()).hexdigest()
