"""Point-cloud and scene geometry.

Synthetic labeled shapes stand in for a furniture database at desk scale:
five primitive classes (box, sphere, cylinder, cone, torus) with procedural
parameter jitter, sampled uniformly by surface area. Canonical clouds are
centered at the origin with unit half-extent.

Metric conventions (documented because the literature varies):
  * Chamfer distance is the symmetric sum of mean *squared* nearest-neighbor
    distances.
  * Point-to-mesh distance is one-directional (points -> mesh), mean squared
    exact point-triangle distance.
  * The vertical axis is +y; rotations are right-handed about it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, _node

SHAPE_CLASSES = ("box", "sphere", "cylinder", "cone", "torus")
N_SHAPE_CLASSES = len(SHAPE_CLASSES)


@dataclass
class PointCloud:
    points: np.ndarray  # (n_points, 3)
    class_id: int


@dataclass
class TriangleMesh:
    vertices: np.ndarray  # (V, 3)
    faces: np.ndarray  # (F, 3) int vertex indices


@dataclass
class BoundingBoxParams:
    translation: np.ndarray  # (3,)
    rotation: np.ndarray  # (cos g, sin g)
    size: np.ndarray  # (3,) per-axis half-extent scale


@dataclass
class FloorPlan:
    """Axis-aligned rectangular floor: half-extents (w, d) and 2-d center (x, z)."""

    half_extents: np.ndarray
    center: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def features(self, scene_scale: float) -> np.ndarray:
        """Conditioning vector: half-extents normalized by the scene scale."""
        return np.asarray(self.half_extents, dtype=np.float64) / scene_scale


# ---------------------------------------------------------------------------
# synthetic shape generation


def shape_params(class_id: int, seed) -> dict:
    """Jittered procedural parameters for (class_id, seed); shared with meshes."""
    params, _ = _params_and_rng(class_id, seed)
    return params


def _params_and_rng(class_id, seed):
    rng = np.random.default_rng([int(class_id), seed])
    return _draw_params(class_id, rng), rng


_JITTER = {
    # ranges kept narrow enough that classes stay chamfer-separable
    0: {"extent": (0.8, 1.0)},
    1: {"radius": (0.75, 0.95)},
    2: {"radius": (0.3, 0.5)},
    3: {"radius": (0.5, 0.8)},
    4: {"major": (0.55, 0.75), "minor": (0.12, 0.24)},
}


def _draw_params(class_id, rng):
    if class_id == 0:  # box
        lo, hi = _JITTER[0]["extent"]
        h = rng.uniform(lo, hi, size=3)
        return {"half_extents": h / h.max()}
    if class_id == 1:  # sphere
        return {"radius": rng.uniform(*_JITTER[1]["radius"])}
    if class_id == 2:  # cylinder
        return {"radius": rng.uniform(*_JITTER[2]["radius"]), "half_height": 1.0}
    if class_id == 3:  # cone
        return {"radius": rng.uniform(*_JITTER[3]["radius"]), "half_height": 1.0}
    if class_id == 4:  # torus
        major = rng.uniform(*_JITTER[4]["major"])
        lo, hi = _JITTER[4]["minor"]
        return {"major": major, "minor": rng.uniform(lo, min(hi, 0.99 - major))}
    raise ValueError(f"unknown shape class_id: {class_id}")


def _median_params(class_id):
    mid = lambda pair: 0.5 * (pair[0] + pair[1])
    if class_id == 0:
        return {"half_extents": np.ones(3)}
    if class_id == 1:
        return {"radius": mid(_JITTER[1]["radius"])}
    if class_id == 2:
        return {"radius": mid(_JITTER[2]["radius"]), "half_height": 1.0}
    if class_id == 3:
        return {"radius": mid(_JITTER[3]["radius"]), "half_height": 1.0}
    if class_id == 4:
        return {"major": mid(_JITTER[4]["major"]), "minor": mid(_JITTER[4]["minor"])}
    raise ValueError(f"unknown shape class_id: {class_id}")


_PROTO_SAMPLING_SEED = 999331


def class_prototype(class_id: int, n_points: int) -> PointCloud:
    """Canonical mid-jitter representative of a class (fixed sampling seed)."""
    params = _median_params(class_id)
    rng = np.random.default_rng([int(class_id), _PROTO_SAMPLING_SEED])
    sampler = (_sample_box, _sample_sphere, _sample_cylinder, _sample_cone, _sample_torus)[class_id]
    return PointCloud(points=sampler(params, n_points, rng), class_id=class_id)


def generate_shape(class_id: int, seed, n_points: int) -> PointCloud:
    """Sample a canonical labeled shape, uniform by surface area, deterministic per seed."""
    params, rng = _params_and_rng(class_id, seed)
    sampler = (_sample_box, _sample_sphere, _sample_cylinder, _sample_cone, _sample_torus)[class_id]
    pts = sampler(params, n_points, rng)
    return PointCloud(points=pts, class_id=class_id)


def _sample_box(params, n, rng):
    h = params["half_extents"]
    # six faces, picked proportionally to area
    areas = 4.0 * np.array([h[1] * h[2], h[1] * h[2], h[0] * h[2], h[0] * h[2], h[0] * h[1], h[0] * h[1]])
    face = rng.choice(6, size=n, p=areas / areas.sum())
    uv = rng.uniform(-1.0, 1.0, size=(n, 2))
    pts = np.empty((n, 3))
    axis = face // 2  # fixed coordinate
    sign = np.where(face % 2 == 0, 1.0, -1.0)
    other = np.array([[1, 2], [0, 2], [0, 1]])
    for i in range(3):
        m = axis == i
        pts[m, i] = sign[m] * h[i]
        pts[np.ix_(m, other[i])] = uv[m] * h[other[i]]
    return pts


def _sample_sphere(params, n, rng):
    r = params["radius"]
    v = rng.normal(size=(n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v * r


def _sample_cylinder(params, n, rng):
    r, h = params["radius"], params["half_height"]
    side_area = 2.0 * np.pi * r * 2.0 * h
    cap_area = np.pi * r * r
    p = np.array([side_area, cap_area, cap_area])
    part = rng.choice(3, size=n, p=p / p.sum())
    theta = rng.uniform(0.0, 2.0 * np.pi, size=n)
    pts = np.empty((n, 3))
    side = part == 0
    pts[side, 0] = r * np.cos(theta[side])
    pts[side, 2] = r * np.sin(theta[side])
    pts[side, 1] = rng.uniform(-h, h, size=side.sum())
    for part_id, y in ((1, h), (2, -h)):
        m = part == part_id
        rad = r * np.sqrt(rng.uniform(0.0, 1.0, size=m.sum()))
        pts[m, 0] = rad * np.cos(theta[m])
        pts[m, 2] = rad * np.sin(theta[m])
        pts[m, 1] = y
    return pts


def _sample_cone(params, n, rng):
    r, h = params["radius"], params["half_height"]
    slant = np.sqrt((2.0 * h) ** 2 + r * r)
    lateral_area = np.pi * r * slant
    base_area = np.pi * r * r
    on_side = rng.uniform(size=n) < lateral_area / (lateral_area + base_area)
    theta = rng.uniform(0.0, 2.0 * np.pi, size=n)
    pts = np.empty((n, 3))
    # lateral: area density grows linearly with distance from the apex
    u = np.sqrt(rng.uniform(size=on_side.sum()))
    pts[on_side, 0] = u * r * np.cos(theta[on_side])
    pts[on_side, 2] = u * r * np.sin(theta[on_side])
    pts[on_side, 1] = h - 2.0 * h * u
    base = ~on_side
    rad = r * np.sqrt(rng.uniform(size=base.sum()))
    pts[base, 0] = rad * np.cos(theta[base])
    pts[base, 2] = rad * np.sin(theta[base])
    pts[base, 1] = -h
    return pts


def _sample_torus(params, n, rng):
    big, small = params["major"], params["minor"]
    theta = rng.uniform(0.0, 2.0 * np.pi, size=n)
    # rejection-sample the tube angle: area element is proportional to R + r*cos(phi)
    phi = np.empty(n)
    remaining = np.arange(n)
    while remaining.size:
        cand = rng.uniform(-np.pi, np.pi, size=remaining.size)
        accept = rng.uniform(size=remaining.size) < (big + small * np.cos(cand)) / (big + small)
        phi[remaining[accept]] = cand[accept]
        remaining = remaining[~accept]
    ring = big + small * np.cos(phi)
    return np.stack([ring * np.cos(theta), small * np.sin(phi), ring * np.sin(theta)], axis=1)


# ---------------------------------------------------------------------------
# analytic meshes for the same shape parameters (used by the point-to-mesh metric)


def class_mesh(class_id: int, seed, resolution: int = 32) -> TriangleMesh:
    """Triangle mesh of the jittered shape produced by generate_shape(class_id, seed, .)."""
    builder = (_mesh_box, _mesh_sphere, _mesh_cylinder, _mesh_cone, _mesh_torus)[class_id]
    return builder(shape_params(class_id, seed), resolution)


def prototype_mesh(class_id: int, resolution: int = 32) -> TriangleMesh:
    """Triangle mesh of the mid-jitter class prototype."""
    builder = (_mesh_box, _mesh_sphere, _mesh_cylinder, _mesh_cone, _mesh_torus)[class_id]
    return builder(_median_params(class_id), resolution)


def _mesh_box(params, _res):
    h = params["half_extents"]
    corners = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=float) * h
    faces = np.array([
        [0, 1, 3], [0, 3, 2], [4, 6, 7], [4, 7, 5],  # x = -h, x = +h
        [0, 4, 5], [0, 5, 1], [2, 3, 7], [2, 7, 6],  # y = -h, y = +h
        [0, 2, 6], [0, 6, 4], [1, 5, 7], [1, 7, 3],  # z = -h, z = +h
    ])
    return TriangleMesh(vertices=corners, faces=faces)


def _mesh_sphere(params, res):
    r = params["radius"]
    n_lat, n_lon = res // 2, res
    lat = np.linspace(0.0, np.pi, n_lat + 1)
    lon = np.linspace(0.0, 2.0 * np.pi, n_lon, endpoint=False)
    verts = [np.array([0.0, r, 0.0])]
    for la in lat[1:-1]:
        for lo in lon:
            verts.append(r * np.array([np.sin(la) * np.cos(lo), np.cos(la), np.sin(la) * np.sin(lo)]))
    verts.append(np.array([0.0, -r, 0.0]))
    top, bottom = 0, len(verts) - 1
    ring = lambda i, j: 1 + i * n_lon + (j % n_lon)
    faces = []
    for j in range(n_lon):
        faces.append([top, ring(0, j + 1), ring(0, j)])
        faces.append([bottom, ring(n_lat - 2, j), ring(n_lat - 2, j + 1)])
    for i in range(n_lat - 2):
        for j in range(n_lon):
            faces.append([ring(i, j), ring(i, j + 1), ring(i + 1, j)])
            faces.append([ring(i + 1, j), ring(i, j + 1), ring(i + 1, j + 1)])
    return TriangleMesh(vertices=np.array(verts), faces=np.array(faces))


def _ngon_ring(r, y, res):
    theta = np.linspace(0.0, 2.0 * np.pi, res, endpoint=False)
    return np.stack([r * np.cos(theta), np.full(res, y), r * np.sin(theta)], axis=1)


def _fan(center_idx, ring_start, res, flip=False):
    faces = []
    for j in range(res):
        a, b = ring_start + j, ring_start + (j + 1) % res
        faces.append([center_idx, a, b] if flip else [center_idx, b, a])
    return faces


def _mesh_cylinder(params, res):
    r, h = params["radius"], params["half_height"]
    top_ring = _ngon_ring(r, h, res)
    bot_ring = _ngon_ring(r, -h, res)
    verts = np.vstack([top_ring, bot_ring, [[0.0, h, 0.0]], [[0.0, -h, 0.0]]])
    top_c, bot_c = 2 * res, 2 * res + 1
    faces = _fan(top_c, 0, res) + _fan(bot_c, res, res, flip=True)
    for j in range(res):
        a, b = j, (j + 1) % res
        faces.append([a, b, res + a])
        faces.append([res + a, b, res + b])
    return TriangleMesh(vertices=verts, faces=np.array(faces))


def _mesh_cone(params, res):
    r, h = params["radius"], params["half_height"]
    ring = _ngon_ring(r, -h, res)
    verts = np.vstack([ring, [[0.0, h, 0.0]], [[0.0, -h, 0.0]]])
    apex, base_c = res, res + 1
    faces = _fan(apex, 0, res) + _fan(base_c, 0, res, flip=True)
    return TriangleMesh(vertices=verts, faces=np.array(faces))


def _mesh_torus(params, res):
    big, small = params["major"], params["minor"]
    n_major, n_minor = res, max(res // 2, 8)
    theta = np.linspace(0.0, 2.0 * np.pi, n_major, endpoint=False)
    phi = np.linspace(0.0, 2.0 * np.pi, n_minor, endpoint=False)
    verts = []
    for th in theta:
        for ph in phi:
            ring = big + small * np.cos(ph)
            verts.append([ring * np.cos(th), small * np.sin(ph), ring * np.sin(th)])
    idx = lambda i, j: (i % n_major) * n_minor + (j % n_minor)
    faces = []
    for i in range(n_major):
        for j in range(n_minor):
            faces.append([idx(i, j), idx(i + 1, j), idx(i, j + 1)])
            faces.append([idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1)])
    return TriangleMesh(vertices=np.array(verts), faces=np.array(faces))


# ---------------------------------------------------------------------------
# distances


def _pairwise_sq_dists(a, b):
    # ||a - b||^2 = ||a||^2 - 2 a.b + ||b||^2, clipped against roundoff
    d = (a * a).sum(axis=-1)[..., :, None] - 2.0 * (a @ np.swapaxes(b, -1, -2)) + (b * b).sum(axis=-1)[..., None, :]
    return np.maximum(d, 0.0)


def _exact_sq_dists(a, b, block=1024):
    """Pairwise squared distances by explicit differences: exact zeros on matches."""
    out = np.empty((a.shape[0], b.shape[0]))
    for lo in range(0, a.shape[0], block):
        diff = a[lo:lo + block, None, :] - b[None, :, :]
        out[lo:lo + block] = (diff * diff).sum(-1)
    return out


def chamfer_distance(a, b):
    """Symmetric Chamfer distance between point sets.

    mean_i min_j ||a_i - b_j||^2 + mean_j min_i ||a_i - b_j||^2. Accepts
    (n, 3) arrays, PointCloud, or autodiff Tensors; with Tensor inputs the
    result is differentiable (nearest-neighbor ties break to the lowest index
    and the gradient uses the selected neighbor only).
    """
    if isinstance(a, Tensor) or isinstance(b, Tensor):
        return _chamfer_node(_as_cloud_tensor(a), _as_cloud_tensor(b))
    a, b = _as_points(a), _as_points(b)
    d = _exact_sq_dists(a, b)
    return float(d.min(axis=1).mean() + d.min(axis=0).mean())


def _as_points(x):
    if isinstance(x, PointCloud):
        x = x.points
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[-1] != 3 or x.shape[0] == 0:
        raise ValueError(f"chamfer_distance: expected nonempty (n, 3) points, got shape {x.shape}")
    return x


def _as_cloud_tensor(x):
    if isinstance(x, PointCloud):
        x = x.points
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.data.ndim != 2 or x.data.shape[-1] != 3 or x.data.shape[0] == 0:
        raise ValueError(f"chamfer_distance: expected nonempty (n, 3) points, got shape {x.data.shape}")
    return x


def _chamfer_node(a: Tensor, b: Tensor) -> Tensor:
    d = _pairwise_sq_dists(a.data, b.data)
    ia = d.argmin(axis=1)
    ib = d.argmin(axis=0)
    na, nb = a.data.shape[0], b.data.shape[0]
    out_data = d[np.arange(na), ia].mean() + d[ib, np.arange(nb)].mean()

    def bwd(out):
        g = out.grad
        if a.requires_grad:
            ga = (2.0 / na) * (a.data - b.data[ia])
            np.add.at(ga, ib, (2.0 / nb) * (a.data[ib] - b.data))
            a._accumulate(g * ga)
        if b.requires_grad:
            gb = (2.0 / nb) * (b.data - a.data[ib])
            np.add.at(gb, ia, (2.0 / na) * (b.data[ia] - a.data))
            b._accumulate(g * gb)

    return _node("chamfer", out_data, (a, b), bwd)


def batch_chamfer(a: Tensor, b: Tensor) -> Tensor:
    """Mean Chamfer distance over a batch: a, b of shape (B, n, 3) / (B, m, 3)."""
    a, b = (x if isinstance(x, Tensor) else Tensor(x) for x in (a, b))
    if a.data.ndim != 3 or b.data.ndim != 3 or a.data.shape[0] != b.data.shape[0]:
        raise ValueError(f"batch_chamfer: incompatible shapes {a.data.shape} and {b.data.shape}")
    bsz, na, nb = a.data.shape[0], a.data.shape[1], b.data.shape[1]
    d = _pairwise_sq_dists(a.data, b.data)  # (B, na, nb)
    ia = d.argmin(axis=2)  # (B, na)
    ib = d.argmin(axis=1)  # (B, nb)
    rows = np.arange(bsz)[:, None]
    out_data = (
        np.take_along_axis(d, ia[:, :, None], axis=2).mean(axis=(1, 2))
        + np.take_along_axis(d, ib[:, None, :], axis=1).mean(axis=(1, 2))
    ).mean()
    b_at_ia = b.data[rows, ia]  # (B, na, 3)
    a_at_ib = a.data[rows, ib]  # (B, nb, 3)

    def bwd(out):
        g = out.grad / bsz
        if a.requires_grad:
            ga = (2.0 / na) * (a.data - b_at_ia)
            flat = ga.reshape(-1, 3)
            np.add.at(flat, (rows * na + ib).ravel(), (2.0 / nb) * (a_at_ib - b.data).reshape(-1, 3))
            a._accumulate(g * flat.reshape(a.data.shape))
        if b.requires_grad:
            gb = (2.0 / nb) * (b.data - a_at_ib)
            flat = gb.reshape(-1, 3)
            np.add.at(flat, (rows * nb + ia).ravel(), (2.0 / na) * (b_at_ia - a.data).reshape(-1, 3))
            b._accumulate(g * flat.reshape(b.data.shape))

    return _node("chamfer", out_data, (a, b), bwd)


def closest_point_on_triangles(p, tri):
    """Closest points on each of T triangles to each of P query points.

    p: (P, 3); tri: (T, 3, 3). Returns (P, T, 3). Vectorized barycentric
    region classification (Ericson, Real-Time Collision Detection).
    """
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]  # (T, 3)
    ab, ac = b - a, c - a
    p = p[:, None, :]  # (P, 1, 3)
    ap = p - a
    d1 = (ab * ap).sum(-1)
    d2 = (ac * ap).sum(-1)
    bp = p - b
    d3 = (ab * bp).sum(-1)
    d4 = (ac * bp).sum(-1)
    cp = p - c
    d5 = (ab * cp).sum(-1)
    d6 = (ac * cp).sum(-1)
    vc = d1 * d4 - d3 * d2
    vb = d5 * d2 - d1 * d6
    va = d3 * d6 - d5 * d4

    with np.errstate(divide="ignore", invalid="ignore"):
        v_ab = d1 / (d1 - d3)
        w_ac = d2 / (d2 - d6)
        w_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        denom = 1.0 / (va + vb + vc)
    v_face = vb * denom
    w_face = vc * denom

    on_a = (d1 <= 0) & (d2 <= 0)
    on_b = (d3 >= 0) & (d4 <= d3)
    on_c = (d6 >= 0) & (d5 <= d6)
    on_ab = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
    on_ac = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
    on_bc = (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0)

    candidates = [
        (on_a, a + 0.0 * ap),
        (on_b, b + 0.0 * ap),
        (on_c, c + 0.0 * ap),
        (on_ab, a + v_ab[..., None] * ab),
        (on_ac, a + w_ac[..., None] * ac),
        (on_bc, b + w_bc[..., None] * (c - b)),
    ]
    closest = a + v_face[..., None] * ab + w_face[..., None] * ac
    taken = np.zeros(closest.shape[:2], dtype=bool)
    for mask, value in candidates:
        use = mask & ~taken
        closest = np.where(use[..., None], value, closest)
        taken |= use
    return closest


def point2mesh_distance(points, mesh: TriangleMesh, block: int = 512) -> float:
    """Mean squared distance from each point to its nearest mesh triangle."""
    if isinstance(points, PointCloud):
        points = points.points
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[-1] != 3 or points.shape[0] == 0:
        raise ValueError(f"point2mesh_distance: expected nonempty (n, 3) points, got shape {points.shape}")
    if mesh.faces.shape[0] == 0:
        raise ValueError("point2mesh_distance: mesh has no faces")
    tri = mesh.vertices[mesh.faces]  # (T, 3, 3)
    total = 0.0
    for lo in range(0, points.shape[0], block):
        chunk = points[lo:lo + block]
        closest = closest_point_on_triangles(chunk, tri)
        d = ((chunk[:, None, :] - closest) ** 2).sum(-1)
        total += d.min(axis=1).sum()
    return float(total / points.shape[0])


# ---------------------------------------------------------------------------
# bounding-box transforms


def rotation_matrix_y(rotation) -> np.ndarray:
    """Right-handed rotation about +y from the (cos g, sin g) pair."""
    cg, sg = float(rotation[0]), float(rotation[1])
    return np.array([[cg, 0.0, sg], [0.0, 1.0, 0.0], [-sg, 0.0, cg]])


def _check_rotation(r):
    r = np.asarray(r, dtype=np.float64)
    if abs(r @ r - 1.0) > 1e-6:
        raise ValueError(f"rotation pair {r} is not normalized; apply normalize_rotation first")
    return r


def apply_bbox(points, bbox: BoundingBoxParams) -> np.ndarray:
    """Canonical points -> scene: scale per axis, rotate about +y, translate."""
    if isinstance(points, PointCloud):
        points = points.points
    r = _check_rotation(bbox.rotation)
    scaled = np.asarray(points, dtype=np.float64) * np.asarray(bbox.size, dtype=np.float64)
    return scaled @ rotation_matrix_y(r).T + np.asarray(bbox.translation, dtype=np.float64)


def invert_bbox(points, bbox: BoundingBoxParams) -> np.ndarray:
    """Inverse of apply_bbox: translate back, unrotate, unscale."""
    r = _check_rotation(bbox.rotation)
    moved = np.asarray(points, dtype=np.float64) - np.asarray(bbox.translation, dtype=np.float64)
    return (moved @ rotation_matrix_y(r)) / np.asarray(bbox.size, dtype=np.float64)


def normalize_rotation(r) -> np.ndarray:
    """Project onto the unit circle; the degenerate zero pair falls back to (1, 0)."""
    r = np.asarray(r, dtype=np.float64)
    n = np.linalg.norm(r)
    if n > 1e-8:
        return r / n
    return np.array([1.0, 0.0])


# ---------------------------------------------------------------------------
# class-distribution metric


def categorical_kl(generated_counts, data_counts, smoothing: float = 1e-6) -> float:
    """KL(p_generated || p_data) over class histograms, with additive smoothing."""
    g = np.asarray(generated_counts, dtype=np.float64)
    d = np.asarray(data_counts, dtype=np.float64)
    if g.sum() <= 0 or d.sum() <= 0:
        raise ValueError("categorical_kl: histograms must have positive mass")
    p = (g + smoothing) / (g + smoothing).sum()
    q = (d + smoothing) / (d + smoothing).sum()
    return float((p * np.log(p / q)).sum())
