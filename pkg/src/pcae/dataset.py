"""Dataset manifests and ingestion into the binary dataset format."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidInput
from .geometry import PointCloud, farthest_point_sample, normalize, read_off, read_xyz, sample_mesh_surface
from .storage import Dataset

log = logging.getLogger(__name__)

FORMATS = ("off", "xyz")
SPLITS = ("train", "test")


@dataclass(frozen=True)
class ManifestEntry:
    path: Path
    format: str
    label: str
    split: str

    @property
    def id(self):
        return self.path.stem


def read_manifest(path):
    """CSV with header ``path,format,label,split``; relative paths resolve against the manifest."""
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise InvalidInput(f"cannot read manifest {path}: {exc}") from exc
    entries, seen = [], {}
    for n, row in enumerate(rows, 2):
        try:
            p, fmt, label, split = (row[k].strip() for k in ("path", "format", "label", "split"))
        except (KeyError, AttributeError) as exc:
            raise InvalidInput(f"{path}:{n}: expected columns path,format,label,split") from exc
        fmt, split = fmt.lower(), split.lower()
        if fmt not in FORMATS:
            raise InvalidInput(f"{path}:{n}: unknown format {fmt!r}")
        if split not in SPLITS:
            raise InvalidInput(f"{path}:{n}: unknown split {split!r}")
        if not label:
            raise InvalidInput(f"{path}:{n}: empty label")
        full = Path(p) if Path(p).is_absolute() else path.parent / p
        entry = ManifestEntry(full, fmt, label, split)
        if entry.id in seen and seen[entry.id] != split:
            raise InvalidInput(f"{path}:{n}: id {entry.id!r} appears in both splits")
        seen[entry.id] = split
        entries.append(entry)
    return entries


def load_entry(entry: ManifestEntry, n_points, seed) -> PointCloud:
    if not entry.path.exists():
        raise InvalidInput(f"{entry.path}: file not found")
    if entry.format == "off":
        cloud = sample_mesh_surface(read_off(entry.path), n_points, seed)
    else:
        cloud = read_xyz(entry.path)
        if len(cloud) < n_points:
            raise InvalidInput(f"{entry.path}: has {len(cloud)} points, need {n_points}")
        if len(cloud) > n_points:
            cloud = PointCloud(cloud.points[farthest_point_sample(cloud, n_points, seed)])
    return PointCloud(normalize(cloud).points, entry.id)


def ingest(entries, n_points, seed=0):
    """Load every manifest entry; returns (Dataset, list of (path, error message))."""
    clouds, ids, labels, splits, errors = [], [], [], [], []
    for k, entry in enumerate(entries):
        try:
            cloud = load_entry(entry, n_points, seed + k)
        except InvalidInput as exc:
            log.warning("skipping %s: %s", entry.path, exc)
            errors.append((str(entry.path), str(exc)))
            continue
        clouds.append(cloud.points)
        ids.append(entry.id)
        labels.append(entry.label)
        splits.append(entry.split)
    pts = np.stack(clouds) if clouds else np.zeros((0, n_points, 3))
    return Dataset(pts, ids, labels, splits), errors
