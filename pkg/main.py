"""
Командная строка определения места КЗ по записи одного конца линии.

    python main.py simulate   --preset field1 --out data/case1
    python main.py gen-group  --preset desk --out group/ --workers 8
    python main.py estimate   --record data/case1.cfg --line field1 --fault-type CG
    python main.py select     --record data/case1.cfg --line field1 --fault-type CG --group group/
    python main.py locate     --record data/case1.cfg --line field1 --fault-type CG --group group/ --out report.json
    python main.py takagi     --record data/case1.cfg --line field1 --fault-type CG --eval-ms 10 30
    python main.py report     --report report.json --out-dir hist/
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Callable

import sentry_sdk

from app.metrics import export_metrics, observe_stage
from config import Settings, configure_settings
from models import presets
from models.dataset import EventSpec
from models.line import LineParameters, SourceImpedance
from models.records import FaultType
from repositories.manifests import ManifestStorage, load_line, load_sweep
from repositories.records import RecordStorage
from services.dataset import generate_group, select_axes
from services.emt import simulate_event
from services.estimation import estimate_all, oracle_deviation
from services.exceptions import FaultLocationError, InputDataError
from services.pipeline import (
    export_histograms,
    load_report,
    locate,
    location_error,
    perturb_line_parameters,
    write_report,
)
from services.records import add_noise
from services.takagi import takagi_locate, takagi_timeline

logger = logging.getLogger(__name__)

LINE_PRESETS: dict[str, Callable[[], LineParameters]] = {
    "reference": presets.reference_line,
    "field1": lambda: presets.field_case_line(1),
    "field2": lambda: presets.field_case_line(2),
}


def resolve_line(value: str, perturb: float = 0.0) -> LineParameters:
    """Линия по имени пресета или из файла TOML/JSON, с необязательным искажением параметров"""
    line = LINE_PRESETS[value]() if value in LINE_PRESETS else load_line(value)
    return perturb_line_parameters(line, perturb)


def _source(value: str | None, default: SourceImpedance) -> SourceImpedance:
    """'R+jX,R0+jX0' -> сопротивление системы"""
    if value is None:
        return default
    try:
        aerial, zero = (complex(part.strip().replace("i", "j")) for part in value.split(","))
    except ValueError as e:
        raise InputDataError(f"Ожидалось 'Zα,Z0', например '2.4+6.6j,4.1+12.3j', получено {value!r}") from e
    return SourceImpedance.from_complex(aerial, zero)


def _print_json(payload: Any) -> None:
    print(json.dumps(payload, indent=2, ensure_ascii=False))


# ---------------------------------------------------------------------------
# Подкоманды
# ---------------------------------------------------------------------------

def cmd_simulate(args: argparse.Namespace, settings: Settings) -> int:
    if args.preset == "field1":
        spec = presets.field_case_event(1)
    elif args.preset == "field2":
        spec = presets.field_case_event(2)
    else:
        spec = presets.evaluation_event(FaultType.AG, 25.0, 1.0)
    line = resolve_line(args.line) if args.line else spec.line
    changes: dict[str, Any] = {"line": line, "dt_sim": settings.simulation.dt_sim_s,
                               "warmup_cycles": settings.simulation.warmup_cycles,
                               "pre_fault_cycles": settings.simulation.pre_fault_cycles,
                               "post_fault_cycles": settings.simulation.post_fault_cycles,
                               "anti_alias_hz": settings.simulation.anti_alias_hz}
    for field, value in (("fault_type", args.fault_type), ("l_f", args.lf), ("R_f", args.rf),
                         ("fia_deg", args.fia), ("loading_deg", args.loading),
                         ("voltage_kv", args.voltage_kv), ("samples_per_cycle", args.samples_per_cycle),
                         ("post_fault_cycles", args.post_fault_cycles)):
        if value is not None:
            changes[field] = value
    changes["Zs_local"] = _source(args.zs_local, spec.Zs_local)
    changes["Zs_remote"] = _source(args.zs_remote, spec.Zs_remote)
    spec = EventSpec(**{**spec.model_dump(), **changes})

    with observe_stage("simulate"):
        record = simulate_event(spec, settings.simulation.divergence_energy_ratio)
    if args.noise_snr is not None:
        record = add_noise(record, args.noise_snr, seed=settings.app.seed)

    storage = RecordStorage()
    if args.format == "comtrade":
        cfg_path, _ = storage.save_comtrade(record, args.out)
        print(cfg_path)
    else:
        print(storage.save(record, Path(args.out).with_suffix(storage.SUFFIX)))
    return 0


def cmd_gen_group(args: argparse.Namespace, settings: Settings) -> int:
    fault_types = [FaultType(ft) for ft in args.fault_type] if args.fault_type else None
    if args.sweep:
        sweep = load_sweep(args.sweep)
        if fault_types:
            sweep = sweep.model_copy(update={"fault_types": fault_types})
    elif args.preset == "full":
        sweep = presets.full_simulation_sweep(fault_types)
    elif args.preset in ("field1", "field2"):
        sweep = presets.field_sweep(presets.field_case_line(int(args.preset[-1])), fault_types)
    else:
        sweep = presets.desk_sweep(fault_types)

    if args.dry_run:
        _print_json({ft.value: sweep.cardinality(ft) for ft in sweep.fault_types})
        return 0
    with observe_stage("generate"):
        manifest = generate_group(
            sweep, args.out, workers=settings.app.workers, resume=not args.no_resume,
            dataset_settings=settings.dataset, simulation_settings=settings.simulation,
            signal_settings=settings.signals,
        )
    _print_json({group.fault_type.value: group.record_count for group in manifest.groups})
    return 0


def _estimate(args: argparse.Namespace, settings: Settings):
    record = RecordStorage().load_any(args.record)
    line = resolve_line(args.line, args.perturb)
    with observe_stage("estimate"):
        estimate = estimate_all(record, args.fault_type, line, settings.signals, settings.estimation)
    return record, line, estimate


def cmd_estimate(args: argparse.Namespace, settings: Settings) -> int:
    _, line, estimate = _estimate(args, settings)
    payload = estimate.model_dump(mode="json")
    if args.check:
        payload["oracle_deviation"] = oracle_deviation(
            estimate, line, llg_table_value=settings.estimation.llg_table_value,
        )
    _print_json(payload)
    return 0


def cmd_select(args: argparse.Namespace, settings: Settings) -> int:
    _, _, estimate = _estimate(args, settings)
    manifest = ManifestStorage(args.group).load()
    selection = select_axes(manifest.sweep, estimate, fia_lag_deg=settings.dataset.fia_lag_deg)
    _print_json(selection.model_dump(mode="json") | {"size": selection.size})
    return 0


def cmd_locate(args: argparse.Namespace, settings: Settings) -> int:
    record = RecordStorage().load_any(args.record)
    line = resolve_line(args.line, args.perturb)
    manifest = ManifestStorage(args.group).load()
    report = locate(record, args.fault_type, line, manifest, args.group, settings,
                    compare_traditional=args.compare_traditional, with_takagi=not args.no_takagi,
                    model_path=args.model_out)
    if args.out:
        write_report(report, args.out)
    if args.histogram_dir:
        export_histograms(report, args.histogram_dir)
    summary = {"proposed_km": report.proposed_km, "traditional_km": report.traditional_km, "errors": report.errors}
    if args.true_km is not None:
        summary["location_error_km"] = location_error(report, args.true_km)
    _print_json(summary)
    return 0


def cmd_takagi(args: argparse.Namespace, settings: Settings) -> int:
    record = RecordStorage().load_any(args.record)
    line = resolve_line(args.line, args.perturb)
    common = dict(samples_per_cycle=settings.signals.samples_per_cycle, k_ff=settings.signals.k_ff)
    if args.timeline_out:
        timeline = takagi_timeline(record, line, args.fault_type, **common)
        rows = ["time_ms,distance_km"] + [
            f"{p.time_ms:.4f},{'' if p.distance_km is None else f'{p.distance_km:.6f}'}" for p in timeline
        ]
        Path(args.timeline_out).write_text("\n".join(rows) + "\n", encoding="utf-8")
    _print_json({f"{t:g}ms": takagi_locate(record, line, args.fault_type, t, **common) for t in args.eval_ms})
    return 0


def cmd_report(args: argparse.Namespace, settings: Settings) -> int:
    report = load_report(args.report)
    written = export_histograms(report, args.out_dir)
    summary: dict[str, Any] = {"histograms": [str(p) for p in written]}
    if args.true_km is not None:
        summary["location_error_km"] = location_error(report, args.true_km)
    _print_json(summary)
    return 0


# ---------------------------------------------------------------------------
# Разбор аргументов
# ---------------------------------------------------------------------------

def _add_record_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--record", required=True, help="Запись: COMTRADE .cfg или .flr")
    parser.add_argument("--line", required=True, help="Пресет (reference, field1, field2) или файл TOML/JSON")
    parser.add_argument("--fault-type", required=True, choices=[ft.value for ft in FaultType])
    parser.add_argument("--perturb", type=float, default=0.0, help="Относительное искажение параметров линии")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="faultloc", description="Определение места КЗ по записи одного конца")
    parser.add_argument("--config", help="TOML-файл конфигурации")
    parser.add_argument("--log-level", help="Уровень логирования")
    parser.add_argument("--seed", type=int, help="Главный seed")
    parser.add_argument("--workers", type=int, help="Число процессов")
    parser.add_argument("--reps", type=int, help="Число повторов обучения")
    parser.add_argument("--margin-c", type=float, help="Допуск c при оценке диапазона R_f")
    parser.add_argument("--kff", type=float, help="Коэффициент порога обнаружения КЗ")
    parser.add_argument("--metrics-out", help="Файл для метрик Prometheus в текстовом формате")
    commands = parser.add_subparsers(dest="command", required=True)

    simulate = commands.add_parser("simulate", help="Смоделировать КЗ и записать осциллограмму")
    simulate.add_argument("--preset", choices=["evaluation", "field1", "field2"], default="evaluation")
    simulate.add_argument("--line")
    simulate.add_argument("--fault-type", choices=[ft.value for ft in FaultType])
    simulate.add_argument("--lf", type=float, help="Место КЗ, км")
    simulate.add_argument("--rf", type=float, help="Переходное сопротивление, Ом")
    simulate.add_argument("--fia", type=float, help="Угол включения, град")
    simulate.add_argument("--loading", type=float, help="Угол нагрузки, град")
    simulate.add_argument("--zs-local", help="'Zα,Z0' местной системы")
    simulate.add_argument("--zs-remote", help="'Zα,Z0' удалённой системы")
    simulate.add_argument("--voltage-kv", type=float)
    simulate.add_argument("--samples-per-cycle", type=int)
    simulate.add_argument("--post-fault-cycles", type=float, help="Периоды записи после КЗ (для Такаги на 30 мс нужно ≥ 2)")
    simulate.add_argument("--noise-snr", type=float, help="Добавить белый шум с этим SNR, дБ")
    simulate.add_argument("--format", choices=["comtrade", "record"], default="comtrade")
    simulate.add_argument("--out", required=True, help="Путь без расширения")
    simulate.set_defaults(handler=cmd_simulate)

    gen_group = commands.add_parser("gen-group", help="Построить полную группу данных")
    source = gen_group.add_mutually_exclusive_group()
    source.add_argument("--sweep", help="Сетка в TOML/JSON")
    source.add_argument("--preset", choices=["desk", "full", "field1", "field2"], default="desk")
    gen_group.add_argument("--fault-type", action="append", choices=[ft.value for ft in FaultType if ft.is_canonical])
    gen_group.add_argument("--out", required=True, help="Каталог группы")
    gen_group.add_argument("--no-resume", action="store_true")
    gen_group.add_argument("--dry-run", action="store_true", help="Только объём сетки по видам КЗ")
    gen_group.set_defaults(handler=cmd_gen_group)

    estimate = commands.add_parser("estimate", help="Оценить параметры системы и КЗ")
    _add_record_args(estimate)
    estimate.add_argument("--check", action="store_true", help="Сверить аналитику с численным интегрированием")
    estimate.set_defaults(handler=cmd_estimate)

    select = commands.add_parser("select", help="Показать подсетку целевой выборки")
    _add_record_args(select)
    select.add_argument("--group", required=True)
    select.set_defaults(handler=cmd_select)

    locate_cmd = commands.add_parser("locate", help="Определить место КЗ")
    _add_record_args(locate_cmd)
    locate_cmd.add_argument("--group", required=True)
    locate_cmd.add_argument("--compare-traditional", action="store_true")
    locate_cmd.add_argument("--no-takagi", action="store_true")
    locate_cmd.add_argument("--true-km", type=float, help="Известное место КЗ для расчёта погрешностей")
    locate_cmd.add_argument("--model-out", help="Сохранить сеть, обученную с главным seed")
    locate_cmd.add_argument("--histogram-dir")
    locate_cmd.add_argument("--out", help="JSON-отчёт")
    locate_cmd.set_defaults(handler=cmd_locate)

    takagi = commands.add_parser("takagi", help="Метод Такаги")
    _add_record_args(takagi)
    takagi.add_argument("--eval-ms", type=float, nargs="+", default=[10.0, 30.0])
    takagi.add_argument("--timeline-out", help="CSV оценок по всем послеаварийным отсчётам")
    takagi.set_defaults(handler=cmd_takagi)

    report = commands.add_parser("report", help="Гистограммы распределений из отчёта")
    report.add_argument("--report", required=True)
    report.add_argument("--out-dir", required=True)
    report.add_argument("--true-km", type=float)
    report.set_defaults(handler=cmd_report)
    return parser


def cli_overrides(args: argparse.Namespace) -> dict[str, dict[str, Any]]:
    """Флаги командной строки поверх файла конфигурации и окружения"""
    mapping = {
        "log_level": ("app", "log_level"),
        "seed": ("app", "seed"),
        "workers": ("app", "workers"),
        "reps": ("ml", "repetitions"),
        "margin_c": ("estimation", "margin_c"),
        "kff": ("signals", "k_ff"),
    }
    overrides: dict[str, dict[str, Any]] = {}
    for flag, (section, field) in mapping.items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides.setdefault(section, {})[field] = value
    return overrides


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        settings = configure_settings(args.config, cli_overrides(args))
    except FaultLocationError as e:
        print(f"Ошибка конфигурации: {e}", file=sys.stderr)
        return e.exit_code

    # Инициализация Sentry (только если явно включен и указан DSN)
    if settings.sentry.enabled and settings.sentry.dsn:
        sentry_sdk.init(
            dsn=settings.sentry.dsn,
            traces_sample_rate=settings.sentry.traces_sample_rate,
            environment=settings.sentry.environment,
        )

    logging.basicConfig(
        level=getattr(logging, settings.app.log_level.upper()),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )

    try:
        return args.handler(args, settings)
    except FaultLocationError as e:
        logger.error(f"{type(e).__name__}: {e}")
        sentry_sdk.capture_exception(e)
        return e.exit_code
    except Exception as e:
        logger.exception(f"Непредвиденная ошибка: {e}")
        sentry_sdk.capture_exception(e)
        return 1
    finally:
        if args.metrics_out:
            export_metrics(args.metrics_out)


if __name__ == "__main__":
    sys.exit(main())
