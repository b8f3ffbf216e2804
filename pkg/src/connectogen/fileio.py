"""On-disk interchange formats.

Volumes are flat little-endian float32 binaries with a JSON sidecar holding the
shape and subject id. Connectivity matrices are plain CSV, 90 rows of 90 decimal
floats. Both round-trip losslessly at 32-bit precision.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .data import (
    N_REGIONS,
    VOLUME_SHAPE,
    ConnectivityMatrix,
    DtiVolume,
    Label,
    SubjectRecord,
)
from .errors import FormatError


def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def save_volume(volume: DtiVolume, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = np.ascontiguousarray(volume.voxels, dtype="<f4")
    path.write_bytes(data.tobytes())
    meta = {"shape": list(volume.voxels.shape), "subject_id": volume.subject_id}
    _sidecar(path).write_text(json.dumps(meta, sort_keys=True) + "\n")


def load_volume(path: str | Path) -> DtiVolume:
    path = Path(path)
    sidecar = _sidecar(path)
    if not sidecar.exists():
        raise FormatError(f"missing sidecar {sidecar}")
    try:
        meta = json.loads(sidecar.read_text())
        shape = tuple(int(s) for s in meta["shape"])
        subject_id = str(meta["subject_id"])
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise FormatError(f"malformed sidecar {sidecar}: {exc}") from exc
    if shape != VOLUME_SHAPE:
        raise FormatError(f"sidecar shape {shape} != expected {VOLUME_SHAPE}")
    raw = path.read_bytes()
    expected = int(np.prod(shape)) * 4
    if len(raw) != expected:
        raise FormatError(f"{path}: {len(raw)} bytes, expected {expected}")
    voxels = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
    return DtiVolume(voxels=voxels, subject_id=subject_id)


def save_matrix(matrix: ConnectivityMatrix, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    w32 = matrix.weights.astype(np.float32)
    lines = [",".join(repr(float(v)) for v in row) for row in w32]
    path.write_text("\n".join(lines) + "\n")


def load_matrix(path: str | Path) -> ConnectivityMatrix:
    path = Path(path)
    rows = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            cells = line.split(",")
            if len(cells) != N_REGIONS:
                raise FormatError(
                    f"{path}:{lineno}: expected {N_REGIONS} columns, got {len(cells)}"
                )
            try:
                rows.append([float(c) for c in cells])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from exc
    if len(rows) != N_REGIONS:
        raise FormatError(f"{path}: expected {N_REGIONS} rows, got {len(rows)}")
    return ConnectivityMatrix(np.asarray(rows, dtype=np.float64))


# --- cohort directory layout --------------------------------------------------
#
#   <dir>/manifest.json
#   <dir>/volumes/<subject_id>.f32 (+ .f32.json sidecar)
#   <dir>/networks/<subject_id>.csv

MANIFEST_NAME = "manifest.json"


def save_cohort(records: list[SubjectRecord], directory: str | Path, seed: int | None = None) -> Path:
    directory = Path(directory)
    (directory / "volumes").mkdir(parents=True, exist_ok=True)
    (directory / "networks").mkdir(parents=True, exist_ok=True)
    subjects = []
    for rec in records:
        vol_rel = f"volumes/{rec.subject_id}.f32"
        net_rel = f"networks/{rec.subject_id}.csv"
        save_volume(rec.volume, directory / vol_rel)
        save_matrix(rec.reference_network, directory / net_rel)
        subjects.append(
            {
                "subject_id": rec.subject_id,
                "label": rec.label.name,
                "volume": vol_rel,
                "network": net_rel,
            }
        )
    manifest = {"subjects": subjects}
    if seed is not None:
        manifest["seed"] = seed
    manifest_path = directory / MANIFEST_NAME
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest_path


def load_cohort(directory: str | Path) -> list[SubjectRecord]:
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    if not manifest_path.exists():
        raise FormatError(f"no {MANIFEST_NAME} in {directory}")
    try:
        manifest = json.loads(manifest_path.read_text())
        subjects = manifest["subjects"]
    except (json.JSONDecodeError, KeyError) as exc:
        raise FormatError(f"malformed manifest {manifest_path}: {exc}") from exc
    records = []
    for entry in subjects:
        records.append(
            SubjectRecord(
                subject_id=entry["subject_id"],
                volume=load_volume(directory / entry["volume"]),
                reference_network=load_matrix(directory / entry["network"]),
                label=Label.from_name(entry["label"]),
            )
        )
    return records
