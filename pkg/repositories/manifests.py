import json
import logging
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path

from pydantic import ValidationError

from models.dataset import DataGroupManifest, SweepConfig
from models.line import LineParameters
from services.exceptions import ConfigurationError, DatasetError, InputDataError

logger = logging.getLogger(__name__)


class ManifestStorage:
    """Storage для манифеста группы данных и журнала прогресса генерации."""

    MANIFEST_NAME = "manifest.json"
    PROGRESS_NAME = "progress.json"
    PARTIAL_DIR = ".partial"

    def __init__(self, root: str | Path):
        self.root = Path(root)

    @property
    def manifest_path(self) -> Path:
        return self.root / self.MANIFEST_NAME

    @property
    def partial_dir(self) -> Path:
        return self.root / self.PARTIAL_DIR

    def save(self, manifest: DataGroupManifest) -> Path:
        self.root.mkdir(parents=True, exist_ok=True)
        tmp_path = self.manifest_path.with_suffix(".json.tmp")
        tmp_path.write_text(manifest.model_dump_json(indent=2), encoding="utf-8")
        tmp_path.replace(self.manifest_path)
        logger.info(f"Манифест записан: {self.manifest_path} ({manifest.record_count} записей)")
        return self.manifest_path

    def load(self) -> DataGroupManifest:
        try:
            return DataGroupManifest.model_validate_json(self.manifest_path.read_text(encoding="utf-8"))
        except FileNotFoundError as e:
            raise DatasetError(f"Манифест не найден: {self.manifest_path}") from e
        except ValidationError as e:
            raise DatasetError(f"Некорректный манифест {self.manifest_path}: {e}") from e

    def load_progress(self) -> dict[str, dict]:
        """Журнал готовых частичных шардов: имя файла -> {sha256, count, ...}"""
        path = self.partial_dir / self.PROGRESS_NAME
        if not path.exists():
            return {}
        try:
            return json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError:
            logger.warning(f"Журнал прогресса {path} повреждён, генерация начнётся заново")
            return {}

    def save_progress(self, progress: dict[str, dict]) -> None:
        self.partial_dir.mkdir(parents=True, exist_ok=True)
        path = self.partial_dir / self.PROGRESS_NAME
        tmp_path = path.with_suffix(".json.tmp")
        tmp_path.write_text(json.dumps(progress, indent=2, sort_keys=True), encoding="utf-8")
        tmp_path.replace(path)


def _read_structured(path: str | Path) -> dict:
    path = Path(path)
    try:
        if path.suffix.lower() == ".toml":
            with open(path, "rb") as f:
                return tomllib.load(f)
        return json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise InputDataError(f"Файл не найден: {path}") from e
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as e:
        raise ConfigurationError(f"Ошибка разбора {path}: {e}") from e


def load_sweep(path: str | Path) -> SweepConfig:
    """Прочитать сетку полной группы из JSON или TOML"""
    try:
        return SweepConfig.model_validate(_read_structured(path))
    except ValidationError as e:
        raise ConfigurationError(f"Некорректная сетка {path}: {e}") from e


def load_line(path: str | Path) -> LineParameters:
    """Прочитать параметры линии из JSON или TOML (таблица [line] или корень файла)"""
    data = _read_structured(path)
    data = data.get("line", data)
    try:
        return LineParameters.model_validate(data)
    except ValidationError as e:
        raise InputDataError(f"Некорректные параметры линии {path}: {e}") from e
