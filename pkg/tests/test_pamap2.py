"""Raw activity-log ingestion: column selection, gap filling, windowing."""

import numpy as np
import pytest

from cordcpd.dataio import FormatError, load_manifest, load_split
from cordcpd.pamap2 import (FEATURE_NAMES, IMU_NAMES, Pamap2Config,
                            _window_offset, assign_splits, extract_windows,
                            feature_columns, ingest_pamap2, interpolate_gaps,
                            load_subject_file)


def small_cfg(**kw):
    defaults = dict(window_steps=10, change_window=(3, 8), downsample=1,
                    interpolation_cap=2, split_sizes=(2, 1, 1))
    defaults.update(kw)
    return Pamap2Config(**defaults)


def write_raw(path, activities):
    """54-column space-separated rows; kept feature columns get
    activity*1000 + column so tests can recognize what was selected."""
    rows = []
    for k, act in enumerate(activities):
        row = np.full(54, float(k))
        row[1] = act
        for c in feature_columns():
            row[c] = act * 1000.0 + c
        rows.append(row)
    np.savetxt(path, np.asarray(rows), fmt="%.7g")


# ---------------------------------------------------------------------------
# column selection and gap filling

def test_feature_columns_skip_saturating_and_invalid_sensors():
    cols = feature_columns()
    assert len(cols) == 30 and len(set(cols)) == 30
    # per IMU block: temperature, 16g accelerometer, gyro, magnetometer
    assert cols[:10] == [3, 4, 5, 6, 10, 11, 12, 13, 14, 15]
    for start in (3, 20, 37):
        for off in (4, 5, 6):                   # second accelerometer
            assert start + off not in cols
        for off in (13, 14, 15, 16):            # orientation quaternion
            assert start + off not in cols
    assert 2 not in cols                        # heart rate


def test_interpolate_gaps_fills_short_interior_runs_only():
    col = np.array([0.0, np.nan, np.nan, 3.0, np.nan, np.nan, np.nan, 7.0])
    out = interpolate_gaps(col, cap=2)
    assert out[1] == pytest.approx(1.0) and out[2] == pytest.approx(2.0)
    assert np.isnan(out[4:7]).all()             # run of 3 exceeds the cap
    edge = interpolate_gaps(np.array([np.nan, 1.0, np.nan]), cap=5)
    assert np.isnan(edge[0]) and np.isnan(edge[2])   # ends never filled
    unfixable = interpolate_gaps(np.array([np.nan, 2.0, np.nan]), cap=0)
    assert np.isnan(unfixable[0]) and unfixable[1] == 2.0
    assert np.isnan(interpolate_gaps(np.full(4, np.nan), cap=9)).all()


def test_load_subject_file_drops_transient_rows(tmp_path):
    path = tmp_path / "subject101.dat"
    write_raw(path, [0, 1, 1, 0, 2])
    feats, activity = load_subject_file(path, small_cfg())
    assert activity.tolist() == [1, 1, 2]
    assert feats.shape == (3, 30)
    assert feats[:, 0].tolist() == [1003.0, 1003.0, 2003.0]
    assert feats[:, 10].tolist() == [1020.0, 1020.0, 2020.0]


def test_load_subject_file_rejects_narrow_rows(tmp_path):
    path = tmp_path / "broken.dat"
    np.savetxt(path, np.ones((4, 10)), fmt="%.3g")
    with pytest.raises(FormatError, match="columns"):
        load_subject_file(path, small_cfg())


# ---------------------------------------------------------------------------
# windowing

def act_feats(activities):
    activities = np.asarray(activities, dtype=np.float64)
    return np.tile(activities[:, None], (1, 30)), activities.astype(np.int64)


def test_window_offset_is_deterministic_and_in_range():
    cfg = small_cfg()
    values = {_window_offset(f"s:{i}", cfg) for i in range(200)}
    assert values <= set(range(3, 9))
    assert len(values) > 1                       # actually spreads out
    assert _window_offset("s:0", cfg) == _window_offset("s:0", cfg)


def test_extracted_window_puts_the_transition_at_the_hashed_step():
    cfg = small_cfg()
    feats, activity = act_feats([1] * 30 + [2] * 30)
    windows = extract_windows(feats, activity, "s", cfg)
    assert len(windows) == 1
    w = windows[0]
    assert w.change_step == _window_offset("s:0", cfg)
    assert w.values.shape == (10, 3, 10)
    flat = w.values[:, 0, 0]                     # feature value == activity id
    assert (flat[:w.change_step - 1] == 1.0).all()
    assert (flat[w.change_step - 1:] == 2.0).all()


def test_windows_with_extra_or_edge_transitions_are_rejected():
    cfg = small_cfg()
    crowded = extract_windows(*act_feats([1] * 30 + [2] * 3 + [3] * 30), "s", cfg)
    assert crowded == []
    early = extract_windows(*act_feats([1] + [2] * 30), "s", cfg)
    assert early == []


def test_windows_over_unfilled_dropouts_are_rejected():
    cfg = small_cfg()
    feats, activity = act_feats([1] * 30 + [2] * 30)
    feats[30, 7] = np.nan                        # transition row itself
    assert extract_windows(feats, activity, "s", cfg) == []


def test_downsampling_happens_before_windowing():
    cfg = small_cfg(downsample=3)
    feats, activity = act_feats([1] * 90 + [2] * 90)
    windows = extract_windows(feats, activity, "s", cfg)
    assert len(windows) == 1                     # 60 rows after downsampling
    assert windows[0].values.shape == (10, 3, 10)


def test_assign_splits_order_and_overflow():
    assert assign_splits(4, (2, 1, 1)) == ["train", "train", "val", "test"]
    assert assign_splits(3, (2, 2, 2)) == ["train", "train", "val"]
    assert assign_splits(6, (2, 1, 1)) == \
        ["train", "train", "val", "test", "test", "test"]


# ---------------------------------------------------------------------------
# end-to-end ingestion

def test_ingest_builds_a_normalized_dataset(tmp_path):
    raw = tmp_path / "raw"
    raw.mkdir()
    write_raw(raw / "subject101.dat", [1] * 30 + [2] * 30)
    write_raw(raw / "subject102.dat", [3] * 30 + [4] * 30 + [5] * 30)
    out = tmp_path / "windows"
    manifest = ingest_pamap2(raw, out, small_cfg())
    # subject102's second transition lacks room on the right only if the
    # hashed step pushes the window past row 60 + 30; both usually fit
    assert 2 <= len(manifest.series) <= 3
    assert manifest.kind == "pamap2"
    assert manifest.n_vars == len(IMU_NAMES)
    assert manifest.n_feats == len(FEATURE_NAMES)
    assert all(r.change_type == "activity" for r in manifest.series)
    assert manifest.series[0].series_id == "subject101-w000"
    reloaded = load_manifest(out)                # passes validation
    assert reloaded.normalized
    train = load_split(reloaded, "train")
    assert np.abs(train.values).max() == pytest.approx(1.0)
    assert train.connections is None


def test_ingest_is_deterministic(tmp_path):
    raw = tmp_path / "raw"
    raw.mkdir()
    write_raw(raw / "subject101.dat", [1] * 40 + [2] * 40)
    a, b = tmp_path / "a", tmp_path / "b"
    ma = ingest_pamap2(raw, a, small_cfg(split_sizes=(1, 0, 0)))
    ingest_pamap2(raw, b, small_cfg(split_sizes=(1, 0, 0)))
    assert (a / "manifest.json").read_bytes() == (b / "manifest.json").read_bytes()
    rec = ma.series[0]
    assert (a / rec.path).read_bytes() == (b / rec.path).read_bytes()


def test_ingest_error_paths(tmp_path):
    with pytest.raises(FormatError, match="directory"):
        ingest_pamap2(tmp_path / "missing", tmp_path / "out", small_cfg())
    empty = tmp_path / "empty"
    empty.mkdir()
    with pytest.raises(FormatError, match="no .dat"):
        ingest_pamap2(empty, tmp_path / "out", small_cfg())
    transient = tmp_path / "transient"
    transient.mkdir()
    write_raw(transient / "subject101.dat", [0] * 50)
    with pytest.raises(FormatError, match="no usable"):
        ingest_pamap2(transient, tmp_path / "out", small_cfg())


def test_config_validation():
    with pytest.raises(ValueError, match="change_window"):
        small_cfg(change_window=(0, 5))
    with pytest.raises(ValueError, match="change_window"):
        small_cfg(change_window=(5, 10))         # hi beyond window_steps - 1
    with pytest.raises(ValueError):
        small_cfg(downsample=0)
