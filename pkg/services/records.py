"""
Приём однократных записей: разбор и выгрузка COMTRADE, передискретизация, окно 81×6.

Поддерживаются ревизии 1999/2013 с ASCII-данными и 1999 с двоичными 16-битными данными.
Дискретные каналы читаются только для проверки структуры.
"""
import logging
import re
from dataclasses import dataclass, field
from datetime import datetime, timedelta

import numpy as np

from models.records import PHASE_CHANNELS, WINDOW_COLUMNS, WINDOW_HALF, SampleMatrix, WaveformRecord
from services.exceptions import (
    ChannelIdentificationError,
    InputDataError,
    RecordFormatError,
    RecordStructureError,
    SamplingRateError,
    UnsupportedRevisionError,
    WindowingError,
)

logger = logging.getLogger(__name__)

SUPPORTED_REVISIONS = ("1999", "2013")
TYPE_ASCII = "ASCII"
TYPE_BINARY = "BINARY"
TIMESTAMP_FORMAT = "%d/%m/%Y,%H:%M:%S.%f"
EXPORT_CODE_MAX = 99_999
EXPORT_START = datetime(2000, 1, 1)

DEFAULT_CHANNEL_PATTERNS: dict[str, str] = {
    "va": r"(?:U|V)(?:A|L1|R)(?:N|G|E)?$",
    "vb": r"(?:U|V)(?:B|L2|S)(?:N|G|E)?$",
    "vc": r"(?:U|V)(?:C|L3|T)(?:N|G|E)?$",
    "ia": r"I(?:A|L1|R)$",
    "ib": r"I(?:B|L2|S)$",
    "ic": r"I(?:C|L3|T)$",
}

_UNIT_SCALE = {"kv": 1e3, "ka": 1e3, "mv": 1e-3, "ma": 1e-3}


@dataclass(frozen=True)
class AnalogChannel:
    index: int
    name: str
    phase: str
    unit: str
    a: float
    b: float
    primary: float = 1.0
    secondary: float = 1.0
    ps: str = "P"


@dataclass
class ComtradeConfig:
    station: str
    device: str
    revision: str
    analog: list[AnalogChannel]
    n_digital: int
    frequency: float
    sample_rate: float
    n_samples: int
    start: datetime | None
    trigger: datetime | None
    file_type: str
    time_multiplier: float = 1.0
    extras: list[str] = field(default_factory=list)


class _CfgLines:
    """Построчный курсор по cfg с нумерацией строк для сообщений об ошибках"""

    def __init__(self, text: str):
        self._lines = text.splitlines()
        self._position = 0

    @property
    def line_number(self) -> int:
        return self._position

    def next_fields(self) -> list[str]:
        if self._position >= len(self._lines):
            raise RecordFormatError("неожиданный конец cfg-файла", self._position + 1)
        line = self._lines[self._position]
        self._position += 1
        return [item.strip() for item in line.split(",")]

    def remaining(self) -> list[str]:
        rest = [line for line in self._lines[self._position:] if line.strip()]
        self._position = len(self._lines)
        return rest


def _decode(payload: bytes) -> str:
    try:
        return payload.decode("utf-8")
    except UnicodeDecodeError:
        return payload.decode("cp1252", errors="replace")


def _parse_timestamp(fields: list[str]) -> datetime | None:
    if len(fields) < 2:
        return None
    date_part, time_part = fields[0], fields[1]
    if "." in time_part:
        head, fraction = time_part.split(".", 1)
        time_part = f"{head}.{fraction[:6]}"
    else:
        time_part = f"{time_part}.0"
    try:
        return datetime.strptime(f"{date_part},{time_part}", TIMESTAMP_FORMAT)
    except ValueError:
        return None


def parse_cfg(cfg_text: bytes) -> ComtradeConfig:
    """Разбор cfg-файла COMTRADE"""
    lines = _CfgLines(_decode(cfg_text))

    header = lines.next_fields()
    if len(header) < 3 or not header[2]:
        raise UnsupportedRevisionError("ревизия 1991 (без года в cfg) не поддерживается")
    revision = header[2]
    if revision not in SUPPORTED_REVISIONS:
        raise UnsupportedRevisionError(f"ревизия COMTRADE {revision} не поддерживается")

    counts = lines.next_fields()
    try:
        total = int(counts[0])
        n_analog = int(counts[1].upper().rstrip("A"))
        n_digital = int(counts[2].upper().rstrip("D"))
    except (ValueError, IndexError) as e:
        raise RecordFormatError(f"некорректная строка числа каналов: {counts}", lines.line_number) from e
    if total != n_analog + n_digital:
        raise RecordFormatError(f"всего каналов {total} != {n_analog}A + {n_digital}D", lines.line_number)

    analog: list[AnalogChannel] = []
    for _ in range(n_analog):
        fields = lines.next_fields()
        if len(fields) < 10:
            raise RecordFormatError(f"аналоговый канал: ожидалось ≥10 полей, получено {len(fields)}",
                                    lines.line_number)
        try:
            analog.append(AnalogChannel(
                index=int(fields[0]),
                name=fields[1],
                phase=fields[2],
                unit=fields[4],
                a=float(fields[5]),
                b=float(fields[6]),
                primary=float(fields[10]) if len(fields) > 10 and fields[10] else 1.0,
                secondary=float(fields[11]) if len(fields) > 11 and fields[11] else 1.0,
                ps=fields[12].upper() if len(fields) > 12 and fields[12] else "P",
            ))
        except ValueError as e:
            raise RecordFormatError(f"аналоговый канал: {e}", lines.line_number) from e

    for _ in range(n_digital):
        lines.next_fields()

    try:
        frequency = float(lines.next_fields()[0])
        nrates = int(lines.next_fields()[0])
    except ValueError as e:
        raise RecordFormatError(f"частота сети или число частот дискретизации: {e}", lines.line_number) from e
    if nrates != 1:
        raise RecordStructureError(f"поддерживаются записи с одной частотой дискретизации, nrates={nrates}")
    rate_fields = lines.next_fields()
    try:
        sample_rate = float(rate_fields[0])
        n_samples = int(rate_fields[1])
    except (ValueError, IndexError) as e:
        raise RecordFormatError(f"блок частоты дискретизации: {rate_fields}", lines.line_number) from e
    if sample_rate <= 0:
        raise RecordStructureError("частота дискретизации не указана в cfg")

    start = _parse_timestamp(lines.next_fields())
    trigger = _parse_timestamp(lines.next_fields())

    file_type = lines.next_fields()[0].upper()
    if file_type not in (TYPE_ASCII, TYPE_BINARY):
        raise UnsupportedRevisionError(f"формат данных {file_type} не поддерживается")
    if file_type == TYPE_BINARY and revision != "1999":
        raise UnsupportedRevisionError("двоичные данные поддерживаются только для ревизии 1999")

    time_multiplier = 1.0
    extras = lines.remaining()
    if extras:
        try:
            time_multiplier = float(extras[0].split(",")[0])
        except ValueError as e:
            raise RecordFormatError(f"множитель времени: {extras[0]}", lines.line_number) from e

    return ComtradeConfig(
        station=header[0], device=header[1], revision=revision, analog=analog,
        n_digital=n_digital, frequency=frequency, sample_rate=sample_rate, n_samples=n_samples,
        start=start, trigger=trigger, file_type=file_type,
        time_multiplier=time_multiplier, extras=extras[1:],
    )


def _read_ascii(cfg: ComtradeConfig, dat_payload: bytes) -> np.ndarray:
    expected_fields = 2 + len(cfg.analog) + cfg.n_digital
    rows: list[list[float]] = []
    for line_number, line in enumerate(_decode(dat_payload).splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split(",")
        if len(fields) != expected_fields:
            raise RecordStructureError(
                f"dat строка {line_number}: {len(fields)} полей, по cfg ожидается {expected_fields}"
            )
        try:
            rows.append([float(value) for value in fields[2:2 + len(cfg.analog)]])
        except ValueError as e:
            raise RecordFormatError(f"dat: {e}", line_number) from e
    return np.array(rows, dtype=np.float64).reshape(-1, len(cfg.analog))


def _read_binary(cfg: ComtradeConfig, dat_payload: bytes) -> np.ndarray:
    n_words = (cfg.n_digital + 15) // 16
    record_dtype = np.dtype([
        ("n", "<u4"),
        ("timestamp", "<u4"),
        ("analog", "<i2", (len(cfg.analog),)),
        ("digital", "<u2", (n_words,)),
    ])
    if len(dat_payload) % record_dtype.itemsize:
        raise RecordStructureError(
            f"размер dat ({len(dat_payload)} байт) не кратен размеру записи {record_dtype.itemsize}"
        )
    records = np.frombuffer(dat_payload, dtype=record_dtype)
    return records["analog"].astype(np.float64)


def identify_phase_channels(channels: list[AnalogChannel],
                            patterns: dict[str, str] | None = None) -> dict[str, int]:
    """Сопоставить фазные каналы по регулярным выражениям; при неоднозначности ошибка"""
    patterns = patterns or DEFAULT_CHANNEL_PATTERNS
    compiled = {column: re.compile(pattern) for column, pattern in patterns.items()}

    def normalize(text: str) -> str:
        return re.sub(r"[\s_\-.:/]", "", text).upper()

    matches: dict[str, list[int]] = {column: [] for column in PHASE_CHANNELS}
    for position, channel in enumerate(channels):
        candidates = [normalize(channel.name), normalize(channel.name + channel.phase)]
        hit = [column for column, regex in compiled.items()
               if any(regex.search(candidate) for candidate in candidates)]
        if len(hit) > 1:
            raise ChannelIdentificationError(f"канал '{channel.name}' подходит под несколько фаз: {hit}")
        if hit:
            matches[hit[0]].append(position)

    mapping: dict[str, int] = {}
    for column, found in matches.items():
        if not found:
            raise ChannelIdentificationError(f"не найден канал для {column}")
        if len(found) > 1:
            names = [channels[i].name for i in found]
            raise ChannelIdentificationError(f"несколько каналов для {column}: {names}")
        mapping[column] = found[0]
    return mapping


def parse_comtrade(cfg_text: bytes, dat_payload: bytes,
                   channel_patterns: dict[str, str] | None = None) -> WaveformRecord:
    """
    Разобрать пару cfg/dat в WaveformRecord.

    Значения каналов масштабируются как a·x + b, вторичные величины приводятся
    к первичным, кВ/кА переводятся в В/А.

    Raises:
        RecordFormatError: Синтаксическая ошибка cfg (с номером строки)
        RecordStructureError: Несогласованность cfg и dat
        UnsupportedRevisionError: Неподдерживаемая ревизия или формат данных
        ChannelIdentificationError: Фазные каналы не определены однозначно
    """
    cfg = parse_cfg(cfg_text)
    if cfg.file_type == TYPE_ASCII:
        raw = _read_ascii(cfg, dat_payload)
    else:
        raw = _read_binary(cfg, dat_payload)
    if raw.shape[0] != cfg.n_samples:
        raise RecordStructureError(f"в dat {raw.shape[0]} отсчётов, в cfg указано {cfg.n_samples}")

    mapping = identify_phase_channels(cfg.analog, channel_patterns)
    values: dict[str, np.ndarray] = {}
    for column, position in mapping.items():
        channel = cfg.analog[position]
        scaled = raw[:, position] * channel.a + channel.b
        if channel.ps == "S" and channel.secondary:
            scaled = scaled * channel.primary / channel.secondary
        values[column] = scaled * _UNIT_SCALE.get(channel.unit.lower(), 1.0)

    trigger_index = None
    if cfg.start is not None and cfg.trigger is not None:
        offset = (cfg.trigger - cfg.start).total_seconds()
        candidate = int(round(offset * cfg.sample_rate))
        if 0 <= candidate < cfg.n_samples:
            trigger_index = candidate

    logger.debug(
        f"COMTRADE {cfg.revision}/{cfg.file_type}: станция '{cfg.station}', "
        f"{cfg.n_samples} отсчётов при {cfg.sample_rate:g} Гц"
    )
    return WaveformRecord(
        station_id=cfg.station,
        base_frequency=cfg.frequency,
        sample_rate=cfg.sample_rate,
        t=np.arange(cfg.n_samples) / cfg.sample_rate,
        trigger_index=trigger_index,
        **values,
    )


def _format_timestamp(moment: datetime) -> str:
    return moment.strftime(TIMESTAMP_FORMAT)


def export_comtrade(record: WaveformRecord) -> tuple[str, bytes]:
    """
    Выгрузить запись в ASCII COMTRADE ревизии 1999.

    Коды укладываются в шесть знаков ASCII-формата (±99999), ошибка
    квантования не превышает половины шага a, то есть 5e-6 от пика канала.
    """
    n = len(record.t)
    if n == 0 or any(len(record.channel(name)) == 0 for name in PHASE_CHANNELS):
        raise InputDataError("Запись с пустыми каналами не может быть выгружена")

    export_order = ("va", "vb", "vc", "ia", "ib", "ic")
    station = record.station_id.replace(",", " ") or "station"
    lines = [f"{station},fault-locator,1999", "6,6A,0D"]
    codes = []
    for number, name in enumerate(export_order, start=1):
        samples = record.channel(name)
        peak = float(np.max(np.abs(samples)))
        a = peak / EXPORT_CODE_MAX if peak > 0 else 1.0
        codes.append(np.rint(samples / a).astype(np.int64))
        unit = "V" if name.startswith("v") else "A"
        lines.append(
            f"{number},{name.upper()},{name[1].upper()},,{unit},{a:.17g},0,0,"
            f"{-EXPORT_CODE_MAX},{EXPORT_CODE_MAX},1,1,P"
        )
    trigger_offset = (record.trigger_index or 0) / record.sample_rate
    lines += [
        f"{record.base_frequency:g}",
        "1",
        f"{record.sample_rate:.12g},{n}",
        _format_timestamp(EXPORT_START),
        _format_timestamp(EXPORT_START + timedelta(seconds=trigger_offset)),
        TYPE_ASCII,
        "1",
    ]
    cfg_text = "\r\n".join(lines) + "\r\n"

    timestamps = np.rint(np.arange(n) * 1e6 / record.sample_rate).astype(np.int64)
    table = np.column_stack([np.arange(1, n + 1), timestamps, *codes])
    dat_payload = "\r\n".join(",".join(str(value) for value in row) for row in table.tolist()) + "\r\n"
    return cfg_text, dat_payload.encode("ascii")


def resample(record: WaveformRecord, samples_per_cycle: int = 80) -> WaveformRecord:
    """
    Линейная передискретизация к samples_per_cycle отсчётам на период.

    Raises:
        SamplingRateError: Исходная частота ниже половины целевой
    """
    target_rate = samples_per_cycle * record.base_frequency
    if record.sample_rate < 0.5 * target_rate:
        raise SamplingRateError(
            f"Частота {record.sample_rate:g} Гц ниже допустимой {0.5 * target_rate:g} Гц"
        )
    if abs(record.sample_rate - target_rate) <= 1e-9 * target_rate:
        return record

    t0 = float(record.t[0])
    duration = float(record.t[-1] - t0)
    n_new = int(np.floor(duration * target_rate + 1e-9)) + 1
    t_new = t0 + np.arange(n_new) / target_rate
    channels = {name: np.interp(t_new, record.t, record.channel(name)) for name in PHASE_CHANNELS}
    trigger_index = None
    if record.trigger_index is not None:
        trigger_index = min(int(round(record.trigger_index * target_rate / record.sample_rate)), n_new - 1)

    logger.debug(f"Передискретизация {record.sample_rate:g} -> {target_rate:g} Гц ({n_new} отсчётов)")
    return WaveformRecord(
        station_id=record.station_id,
        base_frequency=record.base_frequency,
        sample_rate=target_rate,
        t=t_new,
        trigger_index=trigger_index,
        **channels,
    )


def extract_window(record: WaveformRecord, t_f_index: int, samples_per_cycle: int = 80,
                   label_km: float | None = None) -> SampleMatrix:
    """
    Вырезать окно [t_f−40 … t_f+40] со столбцами [iA, iB, iC, uA, uB, uC].

    Raises:
        SamplingRateError: Запись не приведена к samples_per_cycle
        WindowingError: Недостаточно отсчётов до или после t_f
    """
    if abs(record.samples_per_cycle - samples_per_cycle) > 1e-6 * samples_per_cycle:
        raise SamplingRateError(
            f"Окно требует {samples_per_cycle} отсчётов на период, в записи {record.samples_per_cycle:g}"
        )
    n = record.n_samples
    if t_f_index < WINDOW_HALF:
        raise WindowingError(f"Не хватает {WINDOW_HALF - t_f_index} доаварийных отсчётов")
    if t_f_index > n - WINDOW_HALF - 1:
        raise WindowingError(f"Не хватает {t_f_index - (n - WINDOW_HALF - 1)} послеаварийных отсчётов")
    rows = slice(t_f_index - WINDOW_HALF, t_f_index + WINDOW_HALF + 1)
    data = np.column_stack([record.channel(name)[rows] for name in WINDOW_COLUMNS])
    return SampleMatrix(data=data, label_km=label_km)


def add_noise(record: WaveformRecord, snr_db: float, seed: int = 0) -> WaveformRecord:
    """Добавить белый шум с заданным SNR к каждому каналу"""
    rng = np.random.default_rng(seed)
    noisy = {}
    for name in PHASE_CHANNELS:
        samples = record.channel(name)
        rms = float(np.sqrt(np.mean(samples ** 2)))
        sigma = rms / (10.0 ** (snr_db / 20.0))
        noisy[name] = samples + rng.normal(0.0, sigma, size=samples.shape)
    return record.replace(**noisy)
