import json
from unittest.mock import MagicMock, patch

import pytest

from main import build_parser, cli_overrides, main, resolve_line
from models.records import FaultType
from models.report import FaultLocationReport, LocationDistribution
from repositories.records import RecordStorage
from services.exceptions import InputDataError, NoFaultDetectedError, RepetitionFailureError
from services.pipeline import write_report


@pytest.fixture
def record_path(tmp_path, make_record):
    """Фикстура для записи с КЗ, сохранённой во внутреннем формате"""
    return RecordStorage().save(make_record(fault_index=200), tmp_path / "event.flr")


def _record_args(path) -> list[str]:
    return ["--record", str(path), "--line", "reference", "--fault-type", "AG"]


def test_cli_overrides_map_flags_to_sections():
    args = build_parser().parse_args(["--seed", "4", "--reps", "3", "--kff", "2.0", "--margin-c", "0.1",
                                      "report", "--report", "r.json", "--out-dir", "hist"])

    assert cli_overrides(args) == {
        "app": {"seed": 4},
        "ml": {"repetitions": 3},
        "signals": {"k_ff": 2.0},
        "estimation": {"margin_c": 0.1},
    }


def test_cli_overrides_empty_without_flags():
    args = build_parser().parse_args(["report", "--report", "r.json", "--out-dir", "hist"])

    assert cli_overrides(args) == {}


def test_resolve_line_presets():
    assert resolve_line("reference").length_km == 200.0
    assert resolve_line("field1").length_km == pytest.approx(22.6)
    assert resolve_line("field2", perturb=0.1).R1_km == pytest.approx(1.1 * 0.0367)


def test_gen_group_dry_run(tmp_path, capsys):
    code = main(["gen-group", "--preset", "full", "--dry-run", "--out", str(tmp_path / "group")])

    assert code == 0
    assert json.loads(capsys.readouterr().out) == {"AG": 1_260_864}
    assert not (tmp_path / "group").exists()


def test_gen_group_dry_run_for_selected_types(tmp_path, capsys):
    code = main(["gen-group", "--preset", "desk", "--fault-type", "BC", "--fault-type", "ABC",
                 "--dry-run", "--out", str(tmp_path)])

    assert code == 0
    assert json.loads(capsys.readouterr().out) == {"BC": 2 * 4 * 7 * 40 * 8, "ABC": 2 * 4 * 7 * 40 * 8}


def test_missing_record_exit_code(tmp_path):
    assert main(["estimate", *_record_args(tmp_path / "missing.cfg")]) == 2


def test_invalid_configuration_exit_code(record_path):
    assert main(["--workers", "0", "estimate", *_record_args(record_path)]) == 2


def test_missing_config_file_exit_code(tmp_path, record_path):
    assert main(["--config", str(tmp_path / "missing.toml"), "estimate", *_record_args(record_path)]) == 2


def test_estimation_error_exit_code(record_path):
    with patch("main.estimate_all", side_effect=NoFaultDetectedError("нет КЗ")):
        assert main(["estimate", *_record_args(record_path)]) == 3


def test_training_error_exit_code(tmp_path, record_path):
    with patch("main.ManifestStorage", return_value=MagicMock()), \
            patch("main.locate", side_effect=RepetitionFailureError("все повторы разошлись")):
        code = main(["locate", *_record_args(record_path), "--group", str(tmp_path)])

    assert code == 4


def test_unexpected_error_exit_code(record_path):
    with patch("main.estimate_all", side_effect=RuntimeError("сбой")):
        assert main(["estimate", *_record_args(record_path)]) == 1


def test_estimate_prints_payload(record_path, make_estimate, capsys):
    with patch("main.estimate_all", return_value=make_estimate()):
        code = main(["estimate", *_record_args(record_path)])

    payload = json.loads(capsys.readouterr().out)
    assert code == 0
    assert payload["fault_type"] == "AG"
    assert payload["Zs_aerial"] == [2.3977, 6.6901]


def test_report_command_writes_histograms_and_metrics(tmp_path, make_estimate, capsys):
    report = FaultLocationReport(
        fault_type=FaultType.AG, line_length_km=200.0, estimate=make_estimate(),
        proposed=LocationDistribution(mean_km=25.5, std_km=0.4, predictions_km=[25.0, 25.5, 26.0],
                                      seeds=[0, 1, 2], dataset_size=100),
    )
    path, _ = write_report(report, tmp_path / "report.json")

    code = main(["--metrics-out", str(tmp_path / "metrics.prom"), "report", "--report", str(path),
                 "--out-dir", str(tmp_path / "hist"), "--true-km", "25"])

    summary = json.loads(capsys.readouterr().out)
    assert code == 0
    assert summary["location_error_km"]["proposed"] == pytest.approx(0.5)
    assert (tmp_path / "hist" / "proposed_histogram.csv").exists()
    assert (tmp_path / "metrics.prom").exists()


def test_missing_report_exit_code(tmp_path):
    code = main(["report", "--report", str(tmp_path / "missing.json"), "--out-dir", str(tmp_path)])

    assert code == InputDataError.exit_code
