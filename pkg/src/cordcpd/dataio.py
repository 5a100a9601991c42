"""File formats and dataset plumbing.

Binary tensors (.cpdt), model checkpoints (.cpdm + JSON sidecar), the
dataset manifest, and train-split normalization. All payloads are
little-endian float64 so round trips are bit-exact.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

TENSOR_MAGIC = b"CPDT"
CHECKPOINT_MAGIC = b"CPDM"
FORMAT_VERSION = 1

SPLITS = ("train", "val", "test")


class FormatError(ValueError):
    """A file does not conform to its declared binary or manifest format."""


# ---------------------------------------------------------------------------
# tensor files

def write_tensor(path, array) -> None:
    array = np.ascontiguousarray(array, dtype="<f8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(TENSOR_MAGIC)
        f.write(struct.pack("<I", FORMAT_VERSION))
        f.write(struct.pack("<I", array.ndim))
        f.write(struct.pack(f"<{array.ndim}I", *array.shape))
        f.write(array.tobytes())


def _read_tensor_header(f, path) -> tuple[int, ...]:
    magic = f.read(4)
    if magic != TENSOR_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, not a tensor file")
    (version,) = struct.unpack("<I", f.read(4))
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported tensor format version {version}")
    (rank,) = struct.unpack("<I", f.read(4))
    if rank > 32:
        raise FormatError(f"{path}: implausible tensor rank {rank}")
    dims = struct.unpack(f"<{rank}I", f.read(4 * rank))
    return dims


def read_tensor_header(path) -> tuple[int, ...]:
    """Shape declared in the file header, without reading the payload."""
    with open(path, "rb") as f:
        return _read_tensor_header(f, path)


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        dims = _read_tensor_header(f, path)
        count = int(np.prod(dims, dtype=np.int64)) if dims else 1
        payload = f.read()
    if len(payload) != 8 * count:
        raise FormatError(
            f"{path}: truncated payload, expected {8 * count} bytes got {len(payload)}")
    return np.frombuffer(payload, dtype="<f8").reshape(dims).copy()


# ---------------------------------------------------------------------------
# checkpoints

def config_fingerprint(config: dict) -> bytes:
    """16-byte digest of the canonical JSON encoding of a config tree."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.blake2b(blob, digest_size=16).digest()


def save_checkpoint(path, params: np.ndarray, config: dict, epoch: int,
                    val_loss: float) -> None:
    """Binary parameter vector plus a `<path>.json` sidecar holding the
    config tree, epoch, and validation loss. The binary carries the config
    fingerprint so a mismatched sidecar is detected on load."""
    params = np.ascontiguousarray(params, dtype="<f8").ravel()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", FORMAT_VERSION))
        f.write(config_fingerprint(config))
        f.write(struct.pack("<Q", params.size))
        f.write(params.tobytes())
    sidecar = {
        "format_version": FORMAT_VERSION,
        "config": config,
        "epoch": int(epoch),
        "val_loss": float(val_loss),
        "param_count": int(params.size),
    }
    with open(str(path) + ".json", "w") as f:
        json.dump(sidecar, f, indent=2, sort_keys=True)
        f.write("\n")


def load_checkpoint(path) -> tuple[np.ndarray, dict, dict]:
    """Returns (params, config, meta). Verifies magic, version, sidecar
    presence, fingerprint, and parameter count."""
    path = Path(path)
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}, not a checkpoint file")
        (version,) = struct.unpack("<I", f.read(4))
        if version != FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        fingerprint = f.read(16)
        (count,) = struct.unpack("<Q", f.read(8))
        payload = f.read()
    if len(payload) != 8 * count:
        raise FormatError(
            f"{path}: truncated payload, expected {8 * count} bytes got {len(payload)}")
    sidecar_path = Path(str(path) + ".json")
    if not sidecar_path.exists():
        raise FormatError(f"{sidecar_path}: checkpoint sidecar missing")
    with open(sidecar_path) as f:
        sidecar = json.load(f)
    config = sidecar.get("config")
    if config is None or config_fingerprint(config) != fingerprint:
        raise FormatError(f"{sidecar_path}: config does not match checkpoint fingerprint")
    params = np.frombuffer(payload, dtype="<f8").copy()
    meta = {k: v for k, v in sidecar.items() if k != "config"}
    return params, config, meta


# ---------------------------------------------------------------------------
# dataset manifest

@dataclass
class SeriesRecord:
    series_id: str
    split: str
    change_step: int
    change_type: str
    path: str                        # tensor file, relative to the manifest
    connections_path: str | None = None  # [2,N,N] before/after stack

    def to_dict(self) -> dict:
        d = {
            "series_id": self.series_id,
            "split": self.split,
            "change_step": self.change_step,
            "change_type": self.change_type,
            "path": self.path,
        }
        if self.connections_path is not None:
            d["connections_path"] = self.connections_path
        return d


@dataclass
class DatasetManifest:
    kind: str                        # "synthetic" or "pamap2"
    seed: int
    t_steps: int
    n_vars: int
    n_feats: int
    feature_names: list[str]
    config: dict
    series: list[SeriesRecord] = field(default_factory=list)
    normalized: bool = False
    scale: list[float] | None = None  # per-feature, set by normalize_dataset
    root: Path | None = None          # directory the manifest was loaded from

    def split_records(self, split: str) -> list[SeriesRecord]:
        if split not in SPLITS:
            raise ValueError(f"unknown split {split!r}")
        return [r for r in self.series if r.split == split]

    def find(self, series_id: str) -> SeriesRecord:
        for r in self.series:
            if r.series_id == series_id:
                return r
        raise KeyError(f"series {series_id!r} not in manifest")

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "kind": self.kind,
            "seed": self.seed,
            "t_steps": self.t_steps,
            "n_vars": self.n_vars,
            "n_feats": self.n_feats,
            "feature_names": self.feature_names,
            "config": self.config,
            "normalized": self.normalized,
            "scale": self.scale,
            "series": [r.to_dict() for r in self.series],
        }


def manifest_path(root) -> Path:
    root = Path(root)
    return root if root.name == "manifest.json" else root / "manifest.json"


def save_manifest(manifest: DatasetManifest, root) -> Path:
    path = manifest_path(root)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(manifest.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def load_manifest(root, validate: bool = True) -> DatasetManifest:
    path = manifest_path(root)
    if not path.exists():
        raise FormatError(f"{path}: manifest not found")
    with open(path) as f:
        try:
            raw = json.load(f)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: invalid JSON ({exc})") from exc
    try:
        manifest = DatasetManifest(
            kind=raw["kind"],
            seed=int(raw["seed"]),
            t_steps=int(raw["t_steps"]),
            n_vars=int(raw["n_vars"]),
            n_feats=int(raw["n_feats"]),
            feature_names=list(raw["feature_names"]),
            config=raw.get("config", {}),
            series=[SeriesRecord(
                series_id=s["series_id"],
                split=s["split"],
                change_step=int(s["change_step"]),
                change_type=s["change_type"],
                path=s["path"],
                connections_path=s.get("connections_path"),
            ) for s in raw["series"]],
            normalized=bool(raw.get("normalized", False)),
            scale=raw.get("scale"),
            root=path.parent,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: malformed manifest field ({exc})") from exc
    if validate:
        validate_manifest(manifest)
    return manifest


def validate_manifest(manifest: DatasetManifest) -> None:
    """Reject shape mismatches and bad metadata before any training starts."""
    root = manifest.root
    if root is None:
        raise FormatError("manifest has no root directory to resolve paths against")
    if len(manifest.feature_names) != manifest.n_feats:
        raise FormatError(
            f"manifest declares {manifest.n_feats} features but names "
            f"{len(manifest.feature_names)}")
    if manifest.normalized:
        if manifest.scale is None or len(manifest.scale) != manifest.n_feats:
            raise FormatError("normalized manifest must carry one scale per feature")
        scale = np.asarray(manifest.scale, dtype=np.float64)
        if not np.isfinite(scale).all() or (scale <= 0).any():
            raise FormatError("normalization scales must be finite and strictly positive")
    want = (manifest.t_steps, manifest.n_vars, manifest.n_feats)
    seen = set()
    for rec in manifest.series:
        if rec.series_id in seen:
            raise FormatError(f"duplicate series id {rec.series_id!r}")
        seen.add(rec.series_id)
        if rec.split not in SPLITS:
            raise FormatError(f"series {rec.series_id}: unknown split {rec.split!r}")
        if not (2 <= rec.change_step <= manifest.t_steps):
            raise FormatError(
                f"series {rec.series_id}: change_step {rec.change_step} outside "
                f"[2, {manifest.t_steps}]")
        tensor_path = root / rec.path
        if not tensor_path.exists():
            raise FormatError(f"{tensor_path}: referenced tensor file missing")
        shape = read_tensor_header(tensor_path)
        if tuple(shape) != want:
            raise FormatError(
                f"{tensor_path}: shape {tuple(shape)} does not match manifest {want}")
        if rec.connections_path is not None:
            conn_path = root / rec.connections_path
            if not conn_path.exists():
                raise FormatError(f"{conn_path}: referenced connection file missing")
            cshape = read_tensor_header(conn_path)
            if tuple(cshape) != (2, manifest.n_vars, manifest.n_vars):
                raise FormatError(
                    f"{conn_path}: connection shape {tuple(cshape)} != "
                    f"(2, {manifest.n_vars}, {manifest.n_vars})")


# ---------------------------------------------------------------------------
# split loading

@dataclass
class LoadedSplit:
    ids: list[str]
    values: np.ndarray             # [S, T, N, M]
    change_steps: np.ndarray       # [S] int, 1-based
    change_types: list[str]
    connections: np.ndarray | None  # [S, 2, N, N] or None

    def __len__(self) -> int:
        return len(self.ids)


def load_split(manifest: DatasetManifest, split: str) -> LoadedSplit:
    records = manifest.split_records(split)
    root = manifest.root
    values = np.empty((len(records), manifest.t_steps, manifest.n_vars, manifest.n_feats))
    conns = None
    if records and all(r.connections_path is not None for r in records):
        conns = np.empty((len(records), 2, manifest.n_vars, manifest.n_vars))
    for s, rec in enumerate(records):
        values[s] = read_tensor(root / rec.path)
        if conns is not None:
            conns[s] = read_tensor(root / rec.connections_path)
    return LoadedSplit(
        ids=[r.series_id for r in records],
        values=values,
        change_steps=np.array([r.change_step for r in records], dtype=np.int64),
        change_types=[r.change_type for r in records],
        connections=conns,
    )


# ---------------------------------------------------------------------------
# normalization

def compute_scale(train_values: np.ndarray,
                  feature_names: list[str],
                  fixed: dict[str, float] | None = None) -> np.ndarray:
    """Per-feature scale = max |value| over the training split (center 0).

    ``fixed`` pins named features to a known scale (synthetic locations use
    the box half-width so positions land in about [-1, 1]). Scales below
    1e-12 clamp to 1 so constant features pass through unchanged.
    """
    if train_values.size == 0:
        raise ValueError("training split is empty, cannot compute scales")
    scale = np.max(np.abs(train_values), axis=(0, 1, 2))
    scale = np.where(scale < 1e-12, 1.0, scale)
    if fixed:
        for name, value in fixed.items():
            if name not in feature_names:
                raise ValueError(f"fixed scale for unknown feature {name!r}")
            if not np.isfinite(value) or value <= 0:
                raise ValueError(f"fixed scale for {name!r} must be finite positive")
            scale[feature_names.index(name)] = value
    return scale.astype(np.float64)


def normalize_dataset(manifest: DatasetManifest,
                      fixed: dict[str, float] | None = None) -> np.ndarray:
    """Divide every tensor file by the train-split scale, in place on disk.

    Scales come from the training split only and apply identically to
    val/test. The manifest is rewritten with normalized=True and the scale
    vector; the inverse transform is multiplication by that vector.
    """
    if manifest.normalized:
        raise ValueError("dataset is already normalized")
    train = load_split(manifest, "train")
    if len(train) == 0:
        raise ValueError("training split is empty, cannot normalize")
    scale = compute_scale(train.values, manifest.feature_names, fixed)
    for rec in manifest.series:
        path = manifest.root / rec.path
        write_tensor(path, read_tensor(path) / scale)
    manifest.normalized = True
    manifest.scale = [float(v) for v in scale]
    save_manifest(manifest, manifest.root)
    return scale


def denormalize(values: np.ndarray, scale) -> np.ndarray:
    return values * np.asarray(scale, dtype=np.float64)
