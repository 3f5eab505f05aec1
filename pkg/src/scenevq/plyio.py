"""ASCII PLY export/import for point clouds and triangle meshes."""

import os
import tempfile

import numpy as np

from .geometry import TriangleMesh


def _atomic_write(path, text):
    """Write via temp file + rename so readers never see a partial file."""
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_ply_points(path, points):
    points = np.asarray(points, dtype=np.float64)
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {points.shape[0]}",
        "property double x",
        "property double y",
        "property double z",
        "end_header",
    ]
    lines += [f"{float(p[0])!r} {float(p[1])!r} {float(p[2])!r}" for p in points]
    _atomic_write(path, "\n".join(lines) + "\n")


def write_ply_mesh(path, mesh: TriangleMesh):
    verts = np.asarray(mesh.vertices, dtype=np.float64)
    faces = np.asarray(mesh.faces, dtype=np.int64)
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {verts.shape[0]}",
        "property double x",
        "property double y",
        "property double z",
        f"element face {faces.shape[0]}",
        "property list uchar int vertex_indices",
        "end_header",
    ]
    lines += [f"{float(v[0])!r} {float(v[1])!r} {float(v[2])!r}" for v in verts]
    lines += [f"3 {f[0]} {f[1]} {f[2]}" for f in faces]
    _atomic_write(path, "\n".join(lines) + "\n")


def read_ply(path):
    """Read an ASCII PLY written by this module; returns (points, faces or None)."""
    with open(path) as f:
        header = f.readline().strip()
        fmt = f.readline().strip()
        if header != "ply" or fmt != "format ascii 1.0":
            raise ValueError(f"{path}: not an ascii PLY file")
        n_verts = n_faces = 0
        line = f.readline().strip()
        while line != "end_header":
            parts = line.split()
            if parts[:2] == ["element", "vertex"]:
                n_verts = int(parts[2])
            elif parts[:2] == ["element", "face"]:
                n_faces = int(parts[2])
            line = f.readline().strip()
        points = np.array([[float(v) for v in f.readline().split()] for _ in range(n_verts)])
        faces = None
        if n_faces:
            faces = np.array([[int(v) for v in f.readline().split()[1:]] for _ in range(n_faces)])
    return points, faces
