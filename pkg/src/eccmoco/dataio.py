"""Dataset directory layout and file formats.

A simulated dataset directory contains:

    meta.json              scan geometry, phantom preset, motion settings
    config.txt             verbatim copy of the generating config
    geometry.json          clean projection matrices
    geometry_motion.json   motion-corrupted matrices
    geometry_recovered.json written by `compensate`
    spline_gt.json         injected motion spline
    spline_est.json        estimated motion spline (after `compensate`)
    proj/view_%04d.raw     row-major little-endian float32 projection images
    radon/                 optional cached derivative-Radon tables
    volume_*.raw/.json     reconstructions plus sidecars

Matrices are JSON arrays of 12 row-major numbers, one per projection. Spline
files store translations in micrometers and rotations in degrees; they are
converted to the internal mm/deg convention on load.
"""

import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .errors import ConfigError, LengthMismatch
from .motion_model import MotionSpline
from .radon import ProjectionImage
from .simulation import GridSpec, ScanGeometry, Volume

PROJ_PATTERN = "view_%04d.raw"


def _dump_json(obj, path):
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n")


def write_matrices(path, matrices):
    matrices = np.asarray(matrices, dtype=float)
    _dump_json([m.reshape(12).tolist() for m in matrices], path)


def read_matrices(path):
    raw = json.loads(Path(path).read_text())
    mats = []
    for row in raw:
        if len(row) != 12:
            raise LengthMismatch(f"{path}: expected 12 entries per matrix, got {len(row)}")
        mats.append(np.asarray(row, dtype=float).reshape(3, 4))
    return np.stack(mats)


def write_spline(path, spline, n_projections):
    values = spline.node_values.copy()
    values[:3] *= 1000.0  # mm -> um in the file
    _dump_json(
        {
            "n_projections": int(n_projections),
            "node_indices": spline.node_indices.tolist(),
            "node_values": values.tolist(),
            "units": {"translation": "um", "rotation": "deg"},
        },
        path,
    )


def read_spline(path):
    raw = json.loads(Path(path).read_text())
    values = np.asarray(raw["node_values"], dtype=float)
    units = raw.get("units", {})
    if units.get("translation", "um") == "um":
        values = values.copy()
        values[:3] /= 1000.0
    spline = MotionSpline(
        node_indices=np.asarray(raw["node_indices"], dtype=float), node_values=values
    )
    return spline, int(raw["n_projections"])


def write_projections(proj_dir, images):
    proj_dir = Path(proj_dir)
    proj_dir.mkdir(parents=True, exist_ok=True)
    for i, img in enumerate(images):
        img.data.astype("<f4").tofile(proj_dir / (PROJ_PATTERN % i))


def read_projections(proj_dir, n, rows, cols, pitch):
    proj_dir = Path(proj_dir)
    images = []
    for i in range(n):
        path = proj_dir / (PROJ_PATTERN % i)
        if not path.exists():
            raise ConfigError(f"missing projection file {path}")
        data = np.fromfile(path, dtype="<f4").astype(float)
        if data.size != rows * cols:
            raise LengthMismatch(f"{path}: {data.size} values, expected {rows * cols}")
        images.append(
            ProjectionImage(width=cols, height=rows, spacing=pitch, data=data.reshape(rows, cols))
        )
    return images


def write_meta(path, g, extra=None):
    meta = {"geometry": asdict(g), "units": {"length": "mm", "rotation": "deg"}}
    if extra:
        meta.update(extra)
    _dump_json(meta, path)


def read_meta(path):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"missing {path}; not a dataset directory?")
    meta = json.loads(path.read_text())
    g = ScanGeometry(**meta["geometry"])
    return g, meta


def write_volume(stem, volume):
    stem = Path(stem)
    volume.data.astype("<f4").tofile(stem.with_suffix(".raw"))
    _dump_json(
        {
            "nx": volume.grid.nx,
            "ny": volume.grid.ny,
            "nz": volume.grid.nz,
            "spacing": volume.grid.spacing,
            "origin": list(volume.grid.origin),
        },
        stem.with_suffix(".json"),
    )


def read_volume(stem):
    stem = Path(stem)
    if not stem.with_suffix(".raw").exists():
        raise ConfigError(f"missing volume {stem.with_suffix('.raw')}")
    meta = json.loads(stem.with_suffix(".json").read_text())
    grid = GridSpec(
        nx=meta["nx"], ny=meta["ny"], nz=meta["nz"],
        spacing=meta["spacing"], origin=tuple(meta["origin"]),
    )
    data = np.fromfile(stem.with_suffix(".raw"), dtype="<f4").astype(float)
    return Volume(grid=grid, data=data.reshape(grid.nz, grid.ny, grid.nx))
