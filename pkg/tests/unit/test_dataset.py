import json

import numpy as np
import pytest
from pydantic import ValidationError

from models import presets
from models.dataset import DataGroupManifest, FaultTypeGroup, QuarantineEntry, ShardEntry, SweepConfig
from models.records import FaultType
from repositories.manifests import ManifestStorage, load_line, load_sweep
from repositories.shards import ShardStorage
from services.dataset import (
    bracket_circular,
    bracket_indices,
    generate_group,
    normalize_windows,
    rf_cover_indices,
    select_axes,
    select_target,
    split_train_val,
    voltage_base,
)
from services.exceptions import (
    ConfigurationError,
    DatasetError,
    DatasetTooSmallError,
    SelectionError,
    ShardFormatError,
)


def _windows(n: int, fill: float = 0.0) -> np.ndarray:
    return np.full((n, 81, 6), fill, dtype=np.float32)


@pytest.fixture
def tiny_group(tmp_path, tiny_sweep):
    """Фикстура для группы из двух шардов по 6 записей (метка равна месту КЗ события)"""
    storage = ShardStorage()
    entries = []
    for number, indices in enumerate((range(0, 6), range(6, 12))):
        indices = np.array(list(indices))
        labels = np.array([tiny_sweep.event_spec(FaultType.AG, int(i)).l_f for i in indices])
        records = ShardStorage.pack(_windows(len(indices), fill=float(number)), labels, indices)
        name = f"AG_{number:05d}.fldg"
        entries.append(ShardEntry(file=name, count=len(records), first_index=int(indices[0]),
                                  last_index=int(indices[-1]), sha256=storage.write(tmp_path / name, records)))
    manifest = DataGroupManifest(
        sweep=tiny_sweep, groups=[FaultTypeGroup(fault_type=FaultType.AG, expected_count=12, shards=entries)],
        voltage_base=voltage_base(500.0), current_base=1e3,
    )
    return manifest, tmp_path


@pytest.mark.parametrize(
    "estimate, expected",
    [(20.0, [0, 1, 2]), (25.0, [1, 2]), (5.0, [0, 1]), (40.0, [1, 2]), (10.0, [0, 1])],
)
def test_bracket_indices(estimate, expected):
    assert bracket_indices([10.0, 20.0, 30.0], estimate) == expected


def test_bracket_indices_returns_original_positions():
    assert bracket_indices([30.0, 10.0, 20.0], 15.0) == [1, 2]


@pytest.mark.parametrize(
    "estimate, expected_values",
    [(345.0, {315.0, 0.0}), (90.0, {45.0, 90.0, 135.0}), (58.5, {45.0, 90.0}), (-20.0, {315.0, 0.0})],
)
def test_bracket_circular(estimate, expected_values):
    chosen = bracket_circular(presets.FIA_GRID, estimate)

    assert {presets.FIA_GRID[i] for i in chosen} == expected_values


def test_rf_cover_adds_nearest_neighbours():
    values = [0.5, 2.5, 4.5, 6.5, 8.5, 15.0]

    assert rf_cover_indices(values, (3.0, 5.0)) == [1, 2, 3]
    assert rf_cover_indices(values, (0.0, 0.4)) == [0]
    assert rf_cover_indices(values, (20.0, 30.0)) == [5]


def test_selection_for_reference_event(make_estimate):
    selection = select_axes(presets.full_simulation_sweep(), make_estimate())

    assert {s.z_aerial for s in selection.source_sets} == {1 + 5j, 2 + 8j}
    assert {s.z_zero for s in selection.source_sets} == {5 + 10j, 3 + 15j}
    assert len(selection.source_sets) == 4
    assert selection.loading_deg == [10.0, 12.0]
    assert selection.rf_ohm == [0.5, 2.5, 4.5, 6.5, 8.5]
    assert selection.fia_deg == [45.0, 90.0]
    assert len(selection.lf_km) == 199
    assert selection.size == 4 * 2 * 5 * 199 * 2


def test_selection_for_first_field_case(make_estimate):
    estimate = make_estimate(dict(
        Zs_aerial=1.2678 + 6.7522j, Zs_zero=1.5215 + 11.3984j, loading_deg=1.9916, fia_deg=57.6,
        rf_range=(0.0, 3.3),
    ))

    selection = select_axes(presets.field_sweep(presets.field_case_line(1)), estimate)

    assert {s.z_aerial for s in selection.source_sets} == {0.4 + 1.5j, 1 + 5j}
    assert {s.z_zero for s in selection.source_sets} == {0.8 + 3j, 2 + 6j}
    assert selection.loading_deg == [-2.0, 2.0]
    assert selection.rf_ohm == [0.01, 0.1, 0.2, 0.5, 1.0, 10.0]
    assert selection.lf_km == [float(x) for x in range(1, 23)]
    assert selection.fia_deg == [45.0, 90.0]


def test_selection_for_second_field_case(make_estimate):
    estimate = make_estimate(dict(
        Zs_aerial=0.2881 + 0.8813j, Zs_zero=0.1255 + 1.0429j, loading_deg=2.7417, fia_deg=97.2,
        rf_range=(0.0, 2.8),
    ))

    selection = select_axes(presets.field_sweep(presets.field_case_line(2)), estimate)

    assert {s.z_aerial for s in selection.source_sets} == {0.1 + 1j, 0.4 + 1.5j}
    assert {s.z_zero for s in selection.source_sets} == {0.2 + 1.5j, 0.8 + 3j}
    assert selection.loading_deg == [2.0, 6.0]
    assert selection.rf_ohm == [0.01, 0.1, 0.2, 0.5, 1.0, 10.0]
    assert selection.lf_km == [float(x) for x in range(1, 24)]
    assert selection.fia_deg == [45.0, 90.0]


def test_selection_without_zero_mode_keeps_all_zero_values(make_estimate):
    selection = select_axes(presets.full_simulation_sweep(), make_estimate({"Zs_zero": None}))

    assert {s.z_zero for s in selection.source_sets} == set(presets.ZERO_SOURCES)
    assert len(selection.source_sets) == 6


def test_selection_with_empty_axis(make_estimate, tiny_sweep):
    sweep = tiny_sweep.model_copy(update={"loading_deg": []})

    with pytest.raises(SelectionError) as error:
        select_axes(sweep, make_estimate())

    assert error.value.diagnostics["empty_axes"] == ["loading_deg"]


def test_full_sweep_cardinality():
    assert presets.full_simulation_sweep().cardinality(FaultType.AG) == 1_260_864


def test_non_single_phase_types_skip_high_resistances():
    sweep = presets.full_simulation_sweep(fault_types=[FaultType.AG, FaultType.BC])

    assert len(sweep.rf_axis(FaultType.AG)) == 11
    assert len(sweep.rf_axis(FaultType.BC)) == 7


def test_sweep_rejects_non_canonical_types(reference_line):
    with pytest.raises(ValidationError):
        SweepConfig(line=reference_line, voltage_kv=500.0, fault_types=[FaultType.CG])


def test_sweep_rejects_locations_outside_line(reference_line):
    with pytest.raises(ValidationError):
        SweepConfig(line=reference_line, voltage_kv=500.0, lf_km=[0.0, 100.0])


def test_spec_index_and_coordinates_agree(tiny_sweep):
    for index in range(tiny_sweep.cardinality(FaultType.AG)):
        assert tiny_sweep.spec_index(FaultType.AG, tiny_sweep.coordinates(FaultType.AG, index)) == index


def test_event_spec_by_index(tiny_sweep):
    spec = tiny_sweep.event_spec(FaultType.AG, 7)

    assert spec.R_f == 5.0
    assert spec.l_f == 50.0
    assert spec.fia_deg == 90.0
    assert spec.Zs_local == spec.Zs_remote


def test_normalize_windows_scales_currents_and_voltages():
    data = np.ones((2, 81, 6))

    normalized = normalize_windows(data, voltage_base=4.0, current_base=2.0)

    assert np.allclose(normalized[..., :3], 0.5)
    assert np.allclose(normalized[..., 3:], 0.25)


def test_split_train_val_is_deterministic():
    X, y = np.arange(20 * 6, dtype=float).reshape(20, 6), np.arange(20, dtype=float)

    train_a, val_a = split_train_val(X, y, seed=4)
    train_b, val_b = split_train_val(X, y, seed=4)

    assert len(train_a.X) == 16
    assert len(val_a.X) == 4
    assert np.array_equal(train_a.y, train_b.y)
    assert np.array_equal(val_a.X, val_b.X)
    assert sorted(np.concatenate([train_a.y, val_a.y])) == list(y)


def test_split_train_val_rejects_small_dataset():
    with pytest.raises(DatasetTooSmallError):
        split_train_val(np.zeros((5, 6)), np.zeros(5))


@pytest.mark.parametrize("fraction", [0.0, 1.0])
def test_split_train_val_rejects_empty_part(fraction):
    X, y = np.zeros((20, 6)), np.zeros(20)

    with pytest.raises(DatasetTooSmallError):
        split_train_val(X, y, fraction=fraction)


def test_generate_group_on_empty_sweep(tmp_path, tiny_sweep):
    sweep = tiny_sweep.model_copy(update={"lf_km": []})

    manifest = generate_group(sweep, tmp_path / "group")

    assert manifest.record_count == 0
    assert manifest.group(FaultType.AG).expected_count == 0
    assert manifest.current_base == 1.0
    assert ManifestStorage(tmp_path / "group").load().record_count == 0


def test_shard_write_and_read(tmp_path):
    storage = ShardStorage()
    records = ShardStorage.pack(_windows(3, fill=0.5), np.array([1.0, 2.0, 3.0]), np.array([4, 5, 6]))

    digest = storage.write(tmp_path / "AG_00000.fldg", records)
    loaded = storage.read(tmp_path / "AG_00000.fldg")

    assert digest == ShardStorage.checksum(tmp_path / "AG_00000.fldg")
    assert list(loaded["spec_index"]) == [4, 5, 6]
    assert np.allclose(loaded["data"], 0.5)
    assert loaded.flags.writeable is False


def test_shard_rejects_wrong_magic(tmp_path):
    path = tmp_path / "broken.fldg"
    path.write_bytes(b"XXXX" + bytes(6))

    with pytest.raises(ShardFormatError):
        ShardStorage().read(path)


def test_shard_rejects_truncated_payload(tmp_path):
    storage = ShardStorage()
    records = ShardStorage.pack(_windows(2), np.zeros(2), np.arange(2))
    storage.write(tmp_path / "AG.fldg", records)
    path = tmp_path / "AG.fldg"
    path.write_bytes(path.read_bytes()[:-8])

    with pytest.raises(ShardFormatError):
        storage.read(path)


def test_shard_pack_rejects_wrong_window_shape():
    with pytest.raises(ShardFormatError):
        ShardStorage.pack(np.zeros((2, 80, 6)), np.zeros(2), np.arange(2))


def test_manifest_save_and_load(tiny_group):
    manifest, root = tiny_group
    storage = ManifestStorage(root)

    storage.save(manifest)
    loaded = storage.load()

    assert loaded.record_count == 12
    assert loaded.sweep.source_sets[0].z_aerial == 2 + 8j
    assert loaded.group(FaultType.AG).shards[1].first_index == 6


def test_manifest_load_missing(tmp_path):
    with pytest.raises(DatasetError):
        ManifestStorage(tmp_path).load()


def test_manifest_counts_must_match_grid():
    with pytest.raises(ValidationError):
        FaultTypeGroup(fault_type=FaultType.AG, expected_count=3,
                       quarantined=[QuarantineEntry(spec_index=0, error="расходимость")])


def test_progress_journal(tmp_path):
    storage = ManifestStorage(tmp_path)

    storage.save_progress({"AG_00000.part": {"sha256": "abc", "count": 3, "quarantined": []}})

    assert storage.load_progress()["AG_00000.part"]["count"] == 3


def test_corrupted_progress_journal_restarts(tmp_path):
    storage = ManifestStorage(tmp_path)
    storage.partial_dir.mkdir()
    (storage.partial_dir / storage.PROGRESS_NAME).write_text("{not json", encoding="utf-8")

    assert storage.load_progress() == {}


def test_load_sweep_from_json(tmp_path, tiny_sweep):
    path = tmp_path / "sweep.json"
    path.write_text(tiny_sweep.model_dump_json(), encoding="utf-8")

    sweep = load_sweep(path)

    assert sweep.cardinality(FaultType.AG) == 12
    assert sweep.source_sets[0].z_zero == 3 + 15j


def test_load_sweep_rejects_invalid_toml(tmp_path):
    path = tmp_path / "sweep.toml"
    path.write_text("voltage_kv = [", encoding="utf-8")

    with pytest.raises(ConfigurationError):
        load_sweep(path)


def test_load_line_from_table(tmp_path, reference_line):
    path = tmp_path / "line.json"
    path.write_text(json.dumps({"line": json.loads(reference_line.model_dump_json())}), encoding="utf-8")

    line = load_line(path)

    assert line.length_km == 200.0
    assert np.allclose(line.R_phase, reference_line.R_phase)


def test_select_target_streams_selected_records(tiny_group, make_estimate):
    manifest, root = tiny_group

    dataset = select_target(manifest, make_estimate({"rf_range": (0.0, 0.5)}), root)
    X, labels, indices = dataset.load_arrays()

    assert dataset.size == 6
    assert list(indices) == [0, 1, 2, 3, 4, 5]
    assert X.shape == (6, 81, 6)
    assert np.allclose(X, 0.0)
    assert sorted(set(labels.tolist())) == [50.0, 100.0, 150.0]


def test_select_target_missing_fault_type(tiny_group, make_estimate):
    manifest, root = tiny_group
    estimate = make_estimate({"fault_type": FaultType.BC, "mode": "beta", "Zs_zero": None})

    with pytest.raises(SelectionError):
        select_target(manifest, estimate, root)
