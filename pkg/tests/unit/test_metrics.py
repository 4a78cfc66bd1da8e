from prometheus_client import REGISTRY

from app.metrics import export_metrics, observe_stage, record_estimation_error, record_simulation


def _sample(name: str, labels: dict[str, str]) -> float:
    return REGISTRY.get_sample_value(name, labels) or 0.0


def test_observe_stage_accumulates_timings():
    timings: dict[str, float] = {}

    with observe_stage("select", timings):
        pass
    with observe_stage("select", timings):
        pass

    assert list(timings) == ["select"]
    assert timings["select"] >= 0.0


def test_observe_stage_records_on_error():
    before = _sample("stage_duration_seconds_count", {"stage": "failing"})
    timings: dict[str, float] = {}

    try:
        with observe_stage("failing", timings):
            raise ValueError("stop")
    except ValueError:
        pass

    assert _sample("stage_duration_seconds_count", {"stage": "failing"}) == before + 1
    assert "failing" in timings


def test_counters():
    ok_before = _sample("simulations_total", {"result": "ok"})
    quarantined_before = _sample("simulations_total", {"result": "quarantined"})
    errors_before = _sample("estimation_errors_total", {"error_type": "NoFaultDetectedError"})

    record_simulation(True, 5)
    record_simulation(False)
    record_estimation_error("NoFaultDetectedError")

    assert _sample("simulations_total", {"result": "ok"}) == ok_before + 5
    assert _sample("simulations_total", {"result": "quarantined"}) == quarantined_before + 1
    assert _sample("estimation_errors_total", {"error_type": "NoFaultDetectedError"}) == errors_before + 1


def test_export_metrics(tmp_path):
    with observe_stage("export"):
        pass

    export_metrics(tmp_path / "metrics.prom")

    text = (tmp_path / "metrics.prom").read_text(encoding="utf-8")
    assert 'stage_duration_seconds_count{stage="export"}' in text
