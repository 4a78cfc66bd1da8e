import json
import logging
import struct
from pathlib import Path

import numpy as np

from models.records import WaveformRecord
from services.exceptions import InputDataError, RecordFormatError, RecordStructureError
from services.records import export_comtrade, parse_comtrade

logger = logging.getLogger(__name__)


class RecordStorage:
    """Storage для однократных записей: внутренний формат и пары COMTRADE."""

    MAGIC = b"FLRC"
    FORMAT_VERSION = 1
    # Порядок столбцов двоичного блока (каждый канал хранится непрерывно)
    CHANNELS = ("t", "va", "vb", "vc", "ia", "ib", "ic")
    SUFFIX = ".flr"

    def save(self, record: WaveformRecord, path: str | Path) -> Path:
        """Сохранить запись: MAGIC, u32 длина заголовка, JSON-заголовок, float64 LE блок"""
        path = Path(path)
        header = json.dumps({
            "format_version": self.FORMAT_VERSION,
            "station_id": record.station_id,
            "base_frequency": record.base_frequency,
            "sample_rate": record.sample_rate,
            "trigger_index": record.trigger_index,
            "n_samples": record.n_samples,
            "channels": list(self.CHANNELS),
        }).encode("utf-8")
        block = np.column_stack([record.channel(name) for name in self.CHANNELS])
        payload = np.asfortranarray(block, dtype="<f8").tobytes(order="F")
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as f:
            f.write(self.MAGIC)
            f.write(struct.pack("<I", len(header)))
            f.write(header)
            f.write(payload)
        logger.debug(f"Запись сохранена в {path}")
        return path

    def load(self, path: str | Path) -> WaveformRecord:
        """Загрузить запись внутреннего формата"""
        raw = Path(path).read_bytes()
        if raw[:4] != self.MAGIC:
            raise RecordFormatError(f"{path}: не является файлом записи")
        (header_length,) = struct.unpack_from("<I", raw, 4)
        try:
            header = json.loads(raw[8:8 + header_length].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise RecordFormatError(f"{path}: повреждён заголовок: {e}") from e
        n = int(header["n_samples"])
        channels = header["channels"]
        block = np.frombuffer(raw, dtype="<f8", offset=8 + header_length)
        if block.size != n * len(channels):
            raise RecordStructureError(f"{path}: ожидалось {n * len(channels)} значений, найдено {block.size}")
        columns = block.reshape((n, len(channels)), order="F")
        values = {name: columns[:, k] for k, name in enumerate(channels)}
        return WaveformRecord(
            station_id=header.get("station_id", ""),
            base_frequency=header["base_frequency"],
            sample_rate=header["sample_rate"],
            trigger_index=header.get("trigger_index"),
            **values,
        )

    def save_comtrade(self, record: WaveformRecord, stem: str | Path) -> tuple[Path, Path]:
        """Выгрузить запись в пару stem.cfg / stem.dat"""
        stem = Path(stem)
        stem.parent.mkdir(parents=True, exist_ok=True)
        cfg_text, dat_payload = export_comtrade(record)
        cfg_path, dat_path = stem.with_suffix(".cfg"), stem.with_suffix(".dat")
        cfg_path.write_bytes(cfg_text.encode("utf-8"))
        dat_path.write_bytes(dat_payload)
        logger.info(f"COMTRADE выгружен: {cfg_path}, {dat_path}")
        return cfg_path, dat_path

    def load_comtrade(self, cfg_path: str | Path, channel_patterns: dict[str, str] | None = None) -> WaveformRecord:
        """Загрузить пару COMTRADE; dat ищется рядом с cfg"""
        cfg_path = Path(cfg_path)
        dat_path = cfg_path.with_suffix(".dat")
        if not dat_path.exists():
            dat_path = cfg_path.with_suffix(".DAT")
        return parse_comtrade(cfg_path.read_bytes(), dat_path.read_bytes(), channel_patterns)

    def load_any(self, path: str | Path) -> WaveformRecord:
        """Загрузить запись по расширению файла"""
        path = Path(path)
        try:
            if path.suffix.lower() == ".cfg":
                return self.load_comtrade(path)
            return self.load(path)
        except FileNotFoundError as e:
            raise InputDataError(f"Файл записи не найден: {e.filename}") from e
