"""Seeded synthetic shapes (spheres, boxes, planes) for offline testing."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .geometry import PointCloud, TriangleMesh, normalize, sample_mesh_surface

KINDS = ("sphere", "box", "plane")

_CUBE_QUADS = [(0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1), (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3)]


def _rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    return q * np.sign(np.diag(r))


def box_mesh(sides=(1.0, 1.0, 1.0)):
    """Axis-aligned box centered at the origin, quad faces split in two."""
    corners = np.array([[x, y, z] for x in (-0.5, 0.5) for y in (-0.5, 0.5) for z in (-0.5, 0.5)])
    verts = corners * np.asarray(sides, dtype=np.float64)
    tris = []
    for a, b, c, d in _CUBE_QUADS:
        tris += [(a, b, c), (a, c, d)]
    return TriangleMesh(verts, np.array(tris))


def plane_mesh(width=1.0, height=1.0):
    verts = np.array([[-width, -height, 0], [width, -height, 0], [width, height, 0], [-width, height, 0]]) / 2
    return TriangleMesh(verts, np.array([(0, 1, 2), (0, 2, 3)]))


def make_shape(kind, n_points, rng, jitter=0.01) -> PointCloud:
    if kind == "sphere":
        v = rng.normal(size=(n_points, 3))
        pts = v / np.linalg.norm(v, axis=1, keepdims=True)
        pts = pts * rng.uniform(0.85, 1.15, size=3)
    elif kind == "box":
        mesh = box_mesh(rng.uniform(0.5, 1.5, size=3))
        pts = sample_mesh_surface(mesh, n_points, int(rng.integers(2**31))).points
    elif kind == "plane":
        mesh = plane_mesh(1.0, rng.uniform(0.4, 1.0))
        pts = sample_mesh_surface(mesh, n_points, int(rng.integers(2**31))).points
    else:
        raise ValueError(f"unknown shape kind {kind!r}")
    pts = pts @ _rotation(rng).T + jitter * rng.normal(size=pts.shape)
    return normalize(PointCloud(pts))


def make_corpus(n_train, n_test, n_points=256, seed=0, kinds=KINDS):
    """Balanced corpus: returns (clouds, labels, splits) lists, train entries first."""
    rng = np.random.default_rng(seed)
    clouds, labels, splits = [], [], []
    for split, count in (("train", n_train), ("test", n_test)):
        for kind in kinds:
            for i in range(count):
                c = make_shape(kind, n_points, rng)
                clouds.append(PointCloud(c.points, f"{split}_{kind}_{i:03d}"))
                labels.append(kind)
                splits.append(split)
    return clouds, labels, splits


def write_off(path, mesh: TriangleMesh):
    lines = ["OFF", f"{len(mesh.vertices)} {len(mesh.faces)} 0"]
    lines += [" ".join(repr(float(x)) for x in v) for v in mesh.vertices]
    lines += ["3 " + " ".join(str(int(i)) for i in f) for f in mesh.faces]
    Path(path).write_text("\n".join(lines) + "\n")


def write_fixture(out_dir, per_class=4, test_per_class=2, seed=0):
    """Write OFF meshes (boxes, planes) and XYZ spheres plus a manifest CSV."""
    from .geometry import write_xyz

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    rows = ["path,format,label,split"]
    for split, count in (("train", per_class), ("test", test_per_class)):
        for i in range(count):
            box = box_mesh(rng.uniform(0.5, 1.5, size=3))
            p = out / f"{split}_box_{i:03d}.off"
            write_off(p, box)
            rows.append(f"{p.name},off,box,{split}")
            plane = plane_mesh(1.0, rng.uniform(0.4, 1.0))
            p = out / f"{split}_plane_{i:03d}.off"
            write_off(p, plane)
            rows.append(f"{p.name},off,plane,{split}")
            sphere = make_shape("sphere", 512, rng)
            p = out / f"{split}_sphere_{i:03d}.xyz"
            write_xyz(p, sphere)
            rows.append(f"{p.name},xyz,sphere,{split}")
    manifest = out / "manifest.csv"
    manifest.write_text("\n".join(rows) + "\n")
    return manifest
