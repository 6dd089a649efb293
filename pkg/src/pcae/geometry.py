"""Point-set kernels: normalization, sampling, grouping, Chamfer distance, mesh I/O.

Every function here is pure and deterministic given its inputs and seed.
Neighbor searches are exact brute force over squared Euclidean distances,
with ties always resolved toward the lower point index.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InvalidInput

__all__ = [
    "PointCloud",
    "RegionPyramid",
    "TriangleMesh",
    "normalize",
    "farthest_point_sample",
    "knn_group",
    "build_pyramid",
    "chamfer_distance",
    "sample_mesh_surface",
    "read_off",
    "read_xyz",
    "write_xyz",
]


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray
    id: str = ""

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.size == 0:
            pts = pts.reshape(0, 3)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise InvalidInput(f"points must be an (N, 3) array, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise InvalidInput(f"cloud {self.id!r} has non-finite coordinates")
        pts = pts.copy()
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return self.points.shape[0]


@dataclass(frozen=True)
class RegionPyramid:
    """M sampled centroids, each owning T nested kNN groups of sizes ``scales``."""

    centroid_indices: np.ndarray
    groups: tuple  # groups[t] is an (M, K_t) index array
    scales: tuple

    @property
    def n_regions(self):
        return len(self.centroid_indices)

    def group(self, m, t):
        return self.groups[t][m]


@dataclass(frozen=True)
class TriangleMesh:
    vertices: np.ndarray
    faces: np.ndarray = field(repr=False)

    def face_areas(self):
        v = np.asarray(self.vertices, dtype=np.float64)
        f = np.asarray(self.faces, dtype=np.int64)
        if f.size == 0:
            return np.zeros(0)
        a, b, c = v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


def _as_points(cloud):
    if isinstance(cloud, PointCloud):
        return cloud.points
    return np.asarray(cloud, dtype=np.float64).reshape(-1, 3)


def normalize(cloud: PointCloud) -> PointCloud:
    """Center a cloud on its centroid and scale it into the unit ball.

    If all points coincide the result is all zeros.
    """
    pts = _as_points(cloud)
    if len(pts) == 0:
        raise InvalidInput("cannot normalize an empty cloud")
    centered = pts - pts.mean(axis=0)
    radius = np.sqrt((centered**2).sum(axis=1)).max()
    if radius == 0.0:
        out = np.zeros_like(centered)
    else:
        out = centered / radius
        # re-center once more to remove the rounding residue of the division
        out = out - out.mean(axis=0)
    return PointCloud(out, getattr(cloud, "id", ""))


def _sq_dist_to(pts, c):
    d = pts - c
    return (d * d).sum(axis=-1)


def farthest_point_sample(cloud, m: int, seed: int = 0) -> np.ndarray:
    """Pick ``m`` indices by iterative farthest point sampling.

    The first index is a seeded uniform draw; every later pick maximizes the
    minimum distance to the points already chosen (lowest index on ties).
    """
    pts = _as_points(cloud)
    n = len(pts)
    if m < 1 or m > n:
        raise InvalidInput(f"farthest_point_sample needs 1 <= m <= N, got m={m}, N={n}")
    rng = np.random.default_rng(seed)
    chosen = np.empty(m, dtype=np.int64)
    chosen[0] = rng.integers(n)
    min_d = _sq_dist_to(pts, pts[chosen[0]])
    for k in range(1, m):
        # already-chosen points sit at distance 0 so they cannot win unless all
        # remaining points coincide with the selection
        cand = np.where(np.isin(np.arange(n), chosen[:k]), -1.0, min_d)
        nxt = int(np.argmax(cand))
        chosen[k] = nxt
        np.minimum(min_d, _sq_dist_to(pts, pts[nxt]), out=min_d)
    return chosen


def knn_group(cloud, centroids: Sequence[int], scales: Sequence[int]) -> RegionPyramid:
    """Group the K_t nearest points around each centroid, for every scale.

    Each centroid is part of its own groups. Groups are nested because all
    scales are prefixes of one stable distance ordering.
    """
    pts = _as_points(cloud)
    n = len(pts)
    scales = tuple(int(k) for k in scales)
    if not scales:
        raise InvalidInput("at least one scale is required")
    if any(b <= a for a, b in zip(scales, scales[1:])):
        raise InvalidInput(f"scales must be strictly increasing, got {scales}")
    if scales[0] < 1 or scales[-1] > n:
        raise InvalidInput(f"scales must lie in [1, N={n}], got {scales}")
    centroids = np.asarray(centroids, dtype=np.int64)
    d2 = ((pts[None, :, :] - pts[centroids][:, None, :]) ** 2).sum(axis=-1)
    order = np.argsort(d2, axis=1, kind="stable")
    groups = tuple(order[:, :k].copy() for k in scales)
    return RegionPyramid(centroids, groups, scales)


def build_pyramid(cloud, n_regions: int, scales: Sequence[int], seed: int = 0) -> RegionPyramid:
    """FPS centroids followed by multi-scale kNN grouping."""
    idx = farthest_point_sample(cloud, n_regions, seed)
    return knn_group(cloud, idx, scales)


def _pairwise_dist(a, b):
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt((diff * diff).sum(axis=-1))


def chamfer_distance(a, b) -> float:
    """Symmetric Chamfer distance with unsquared Euclidean norms.

    Sum of the mean nearest-neighbor distance a->b and b->a.
    """
    pa, pb = _as_points(a), _as_points(b)
    if len(pa) == 0 or len(pb) == 0:
        raise InvalidInput("chamfer_distance needs two non-empty clouds")
    d = _pairwise_dist(pa, pb)
    return float(d.min(axis=1).mean() + d.min(axis=0).mean())


def sample_mesh_surface(mesh: TriangleMesh, n: int, seed: int = 0) -> PointCloud:
    """Area-weighted face choice, then a uniform barycentric draw in the face."""
    areas = mesh.face_areas()
    total = areas.sum()
    if not total > 0:
        raise InvalidInput("mesh has no face with positive area")
    if n < 0:
        raise InvalidInput(f"sample count must be >= 0, got {n}")
    if n == 0:
        return PointCloud(np.zeros((0, 3)))
    rng = np.random.default_rng(seed)
    face_idx = rng.choice(len(areas), size=n, p=areas / total)
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    v = np.asarray(mesh.vertices, dtype=np.float64)
    f = np.asarray(mesh.faces, dtype=np.int64)[face_idx]
    a, b, c = v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]
    pts = (1 - r1)[:, None] * a + (r1 * (1 - r2))[:, None] * b + (r1 * r2)[:, None] * c
    return PointCloud(pts)


def _off_tokens(text):
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            yield line


def read_off(path) -> TriangleMesh:
    """Parse an ASCII OFF file; polygons are fan-triangulated from their first vertex."""
    text = Path(path).read_text()
    lines = list(_off_tokens(text))
    if not lines or not lines[0].startswith("OFF"):
        raise InvalidInput(f"{path}: missing OFF header")
    head = lines[0][3:].strip()
    body = lines[1:]
    if not head:  # counts on their own line
        if not body:
            raise InvalidInput(f"{path}: missing element counts")
        head, body = body[0], body[1:]
    try:
        nv, nf = (int(t) for t in head.split()[:2])
        verts = np.array([[float(t) for t in body[i].split()[:3]] for i in range(nv)])
        tris = []
        for line in body[nv:nv + nf]:
            tok = [int(t) for t in line.split()]
            k, idx = tok[0], tok[1:1 + tok[0]]
            if k < 3 or len(idx) != k:
                raise InvalidInput(f"{path}: malformed face {line!r}")
            tris.extend((idx[0], idx[j], idx[j + 1]) for j in range(1, k - 1))
    except (ValueError, IndexError) as exc:
        raise InvalidInput(f"{path}: malformed OFF body ({exc})") from exc
    verts = verts.reshape(-1, 3)
    faces = np.array(tris, dtype=np.int64).reshape(-1, 3)
    if faces.size and (faces.min() < 0 or faces.max() >= nv):
        raise InvalidInput(f"{path}: face index out of range")
    return TriangleMesh(verts, faces)


def read_xyz(path) -> PointCloud:
    try:
        pts = np.loadtxt(path, comments="#", ndmin=2, usecols=(0, 1, 2))
    except ValueError as exc:
        raise InvalidInput(f"{path}: {exc}") from exc
    return PointCloud(pts, Path(path).stem)


def write_xyz(path, cloud, header: str | None = None) -> None:
    pts = _as_points(cloud)
    np.savetxt(path, pts, fmt="%.17g", header=header or "", comments="# ")
