"""PAMAP2 ingestion: raw activity-monitoring logs to a windowed dataset.

Each subject file is a space-separated table at 100 Hz with a timestamp,
an activity id, heart rate, and three 17-column IMU blocks (hand, chest,
ankle). We keep 10 features per IMU (temperature, the 16g accelerometer
triple, gyroscope, magnetometer), drop the 6g accelerometer and the
orientation quaternion, and drop heart rate entirely. Transient rows
(activity id 0) are removed, so a change point is the boundary between two
consecutive non-zero activity runs. After linear interpolation of short
sensor dropouts the series is down-sampled by 20 and cut into fixed-length
windows holding exactly one activity transition.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from . import dataio
from .dataio import DatasetManifest, FormatError, SeriesRecord

IMU_NAMES = ("hand", "chest", "ankle")
IMU_START = {"hand": 3, "chest": 20, "ankle": 37}
# Offsets into one 17-column IMU block: temperature, 16g accelerometer,
# gyroscope, magnetometer. The 6g accelerometer (+4..+6) saturates less
# gracefully and the orientation quaternion (+13..+16) is marked invalid
# in this collection, so both are dropped.
IMU_FEATURE_OFFSETS = (0, 1, 2, 3, 7, 8, 9, 10, 11, 12)
FEATURE_NAMES = ("temp", "acc_x", "acc_y", "acc_z",
                 "gyro_x", "gyro_y", "gyro_z", "mag_x", "mag_y", "mag_z")

ACTIVITY_COLUMN = 1
RAW_COLUMN_COUNT = 54


@dataclass
class Pamap2Config:
    window_steps: int = 100
    change_window: tuple[int, int] = (25, 75)   # 1-based step of the new activity
    downsample: int = 20
    interpolation_cap: int = 50                 # raw samples; longer gaps poison rows
    split_sizes: tuple[int, int, int] = (150, 14, 20)

    def __post_init__(self):
        lo, hi = self.change_window
        if not (2 <= lo <= hi <= self.window_steps - 1):
            raise ValueError(
                f"change_window {self.change_window} outside [2, {self.window_steps - 1}]")
        if self.downsample < 1 or self.interpolation_cap < 0:
            raise ValueError("downsample must be >= 1 and interpolation_cap >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


def feature_columns() -> list[int]:
    """The 30 raw-file column indices kept, ordered hand, chest, ankle."""
    return [IMU_START[name] + off for name in IMU_NAMES for off in IMU_FEATURE_OFFSETS]


def interpolate_gaps(column: np.ndarray, cap: int) -> np.ndarray:
    """Linearly fill interior NaN runs of length <= cap; longer runs and
    runs touching either end stay NaN (windows over them are rejected)."""
    col = np.asarray(column, dtype=np.float64)
    nan = np.isnan(col)
    if not nan.any():
        return col
    valid = np.flatnonzero(~nan)
    if valid.size < 2:
        return col.copy()
    out = col.copy()
    idx = np.arange(col.size)
    filled = np.interp(idx, valid, col[valid])
    edges = np.flatnonzero(np.diff(nan.astype(np.int8)))
    starts = [0] + list(edges + 1) if nan[0] else list(edges + 1)
    for start in starts:
        if not nan[start]:
            continue
        end = start
        while end + 1 < col.size and nan[end + 1]:
            end += 1
        interior = start > 0 and end < col.size - 1
        if interior and (end - start + 1) <= cap:
            out[start:end + 1] = filled[start:end + 1]
    return out


def load_subject_file(path, cfg: Pamap2Config) -> tuple[np.ndarray, np.ndarray]:
    """One raw file -> (features [R, 3*10], activity ids [R]) with transient
    rows removed and short sensor dropouts interpolated."""
    path = Path(path)
    cols = [ACTIVITY_COLUMN] + feature_columns()
    try:
        raw = np.loadtxt(path, usecols=cols, ndmin=2)
    except (ValueError, IndexError) as exc:
        raise FormatError(
            f"{path}: missing columns, expected {RAW_COLUMN_COUNT}-column "
            f"space-separated rows ({exc})") from exc
    if raw.size == 0:
        return np.empty((0, len(cols) - 1)), np.empty(0, dtype=np.int64)
    activity = raw[:, 0].astype(np.int64)
    keep = activity != 0
    feats = raw[keep, 1:]
    activity = activity[keep]
    for j in range(feats.shape[1]):
        feats[:, j] = interpolate_gaps(feats[:, j], cfg.interpolation_cap)
    return feats, activity


def _window_offset(key: str, cfg: Pamap2Config) -> int:
    """Deterministic change step in [lo, hi] for one transition, hashed from
    the file name and transition ordinal so reruns place windows identically."""
    lo, hi = cfg.change_window
    digest = hashlib.blake2b(key.encode("utf-8"), digest_size=8).digest()
    return lo + int.from_bytes(digest, "little") % (hi - lo + 1)


@dataclass
class Window:
    values: np.ndarray      # [T, N, M]
    change_step: int        # 1-based first step of the new activity
    source: str
    ordinal: int


def extract_windows(feats: np.ndarray, activity: np.ndarray, source: str,
                    cfg: Pamap2Config) -> list[Window]:
    """Cut one down-sampled subject series into labeled change windows.

    Each activity transition gets at most one window, positioned so the
    change step lands at a hash-determined spot inside the allowed range;
    windows falling off the series, containing a second transition, or
    covering an unfilled sensor dropout are rejected.
    """
    ds = feats[::cfg.downsample]
    act = activity[::cfg.downsample]
    length = ds.shape[0]
    t_steps = cfg.window_steps
    transitions = np.flatnonzero(act[1:] != act[:-1]) + 1  # first row of new run
    row_ok = ~np.isnan(ds).any(axis=1)
    windows: list[Window] = []
    for ordinal, t in enumerate(transitions):
        step = _window_offset(f"{source}:{ordinal}", cfg)
        start = int(t) - (step - 1)
        if start < 0 or start + t_steps > length:
            continue
        inside = transitions[(transitions > start) & (transitions < start + t_steps)]
        if inside.size != 1:
            continue
        if not row_ok[start:start + t_steps].all():
            continue
        block = ds[start:start + t_steps]
        values = block.reshape(t_steps, len(IMU_NAMES), len(FEATURE_NAMES))
        windows.append(Window(values=values, change_step=step,
                              source=source, ordinal=ordinal))
    return windows


def assign_splits(count: int, sizes: tuple[int, int, int]) -> list[str]:
    """Split labels in deterministic window order: the first ``sizes[0]``
    windows train, the next validate, the remainder (capped) test."""
    labels = []
    for split, size in zip(dataio.SPLITS, sizes):
        labels.extend([split] * size)
    labels = labels[:count]
    while len(labels) < count:
        labels.append("test")
    return labels


def ingest_pamap2(raw_dir, out_dir, cfg: Pamap2Config | None = None) -> DatasetManifest:
    """Build a windowed change-point dataset from a directory of raw
    subject files (``*.dat``, read in sorted name order)."""
    cfg = cfg or Pamap2Config()
    raw_dir = Path(raw_dir)
    out_dir = Path(out_dir)
    if not raw_dir.is_dir():
        raise FormatError(f"{raw_dir}: raw data directory not found")
    files = sorted(raw_dir.glob("*.dat"))
    if not files:
        raise FormatError(f"{raw_dir}: no .dat subject files found")

    windows: list[Window] = []
    for path in files:
        feats, activity = load_subject_file(path, cfg)
        windows.extend(extract_windows(feats, activity, path.stem, cfg))
    if not windows:
        raise FormatError(f"{raw_dir}: no usable change windows in any subject file")

    splits = assign_splits(len(windows), cfg.split_sizes)
    records = []
    for i, (window, split) in enumerate(zip(windows, splits)):
        series_id = f"{window.source}-w{window.ordinal:03d}"
        rel = f"tensors/{series_id}.cpdt"
        dataio.write_tensor(out_dir / rel, window.values)
        records.append(SeriesRecord(
            series_id=series_id,
            split=split,
            change_step=window.change_step,
            change_type="activity",
            path=rel,
        ))

    manifest = DatasetManifest(
        kind="pamap2",
        seed=0,
        t_steps=cfg.window_steps,
        n_vars=len(IMU_NAMES),
        n_feats=len(FEATURE_NAMES),
        feature_names=list(FEATURE_NAMES),
        config=cfg.to_dict(),
        series=records,
    )
    path = dataio.save_manifest(manifest, out_dir)
    manifest.root = path.parent
    if manifest.split_records("train"):
        dataio.normalize_dataset(manifest)
    return manifest
