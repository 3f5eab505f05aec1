"""Scene records: synthetic dataset generation, JSON files, tensor assembly.

A scene is a rectangular floor plan plus 2..max_objects labeled objects with
non-overlapping axis-aligned footprints. Objects reference their canonical
shape by (class_id, shape_seed); generated scenes carry the flow feature and
the looked-up codebook index instead.
"""

import json
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .flowmatch import TupleLayout
from .geometry import BoundingBoxParams, FloorPlan, generate_shape

PLACEMENT_ATTEMPTS = 1000


@dataclass
class SceneObject:
    class_id: int  # 0-based shape class
    bbox: BoundingBoxParams
    shape_seed: int = None
    feature: np.ndarray = None  # 32-dim flow feature, generated scenes only
    codebook_index: int = None


@dataclass
class SceneRecord:
    scene_id: str
    floor: FloorPlan
    objects: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# synthetic dataset generation


def _footprint(bbox: BoundingBoxParams):
    # conservative axis-aligned half-extents of the rotated unit-cube bound
    c, s = abs(bbox.rotation[0]), abs(bbox.rotation[1])
    sx, _, sz = bbox.size
    return c * sx + s * sz, s * sx + c * sz


def _overlaps(x, z, hx, hz, placed):
    for px, pz, phx, phz in placed:
        if abs(x - px) < hx + phx and abs(z - pz) < hz + phz:
            return True
    return False


def generate_scene(scene_index: int, seed, cfg: RunConfig) -> SceneRecord:
    """One scene, deterministic in (seed, scene_index)."""
    rng = np.random.default_rng([seed, scene_index])
    w, d = rng.uniform(cfg.floor_min, cfg.floor_max, size=2)
    floor = FloorPlan(half_extents=np.array([w, d]))
    n_objects = int(rng.integers(cfg.min_objects, cfg.max_objects + 1))
    prior = np.asarray(cfg.class_prior, dtype=np.float64)
    prior = prior / prior.sum()

    objects, placed = [], []
    for _ in range(n_objects):
        class_id = int(rng.choice(cfg.n_shape_classes, p=prior))
        shape_seed = int(rng.integers(2**31))
        size = rng.uniform(cfg.size_min, cfg.size_max) * rng.uniform(0.85, 1.15, size=3)
        gamma = rng.uniform(0.0, 2.0 * np.pi)
        bbox = BoundingBoxParams(
            translation=np.zeros(3),
            rotation=np.array([np.cos(gamma), np.sin(gamma)]),
            size=size,
        )
        hx, hz = _footprint(bbox)
        if hx >= w or hz >= d:
            if not objects:
                raise ValueError(
                    f"object footprint ({hx:.2f}, {hz:.2f}) cannot fit floor ({w:.2f}, {d:.2f})"
                )
            continue
        for _attempt in range(PLACEMENT_ATTEMPTS):
            x = rng.uniform(-(w - hx), w - hx)
            z = rng.uniform(-(d - hz), d - hz)
            if not _overlaps(x, z, hx, hz, placed):
                bbox.translation = np.array([x, size[1], z])  # rest on the floor
                objects.append(SceneObject(class_id=class_id, bbox=bbox, shape_seed=shape_seed))
                placed.append((x, z, hx, hz))
                break
        else:
            if not objects:
                raise ValueError("placement failed for the first object; config infeasible")
            # attempt cap reached: this scene simply holds fewer objects
    return SceneRecord(scene_id=f"scene_{scene_index:05d}", floor=floor, objects=objects)


def gen_dataset(n_scenes: int, seed, cfg: RunConfig):
    """(train, test) scene records split 80/20 (train_fraction), deterministic."""
    if n_scenes < 1:
        raise ValueError("n_scenes must be >= 1")
    records = [generate_scene(i, seed, cfg) for i in range(n_scenes)]
    n_train = int(round(cfg.train_fraction * n_scenes))
    return records[:n_train], records[n_train:]


# ---------------------------------------------------------------------------
# JSON files


def _obj_to_json(o: SceneObject):
    d = {
        "class": int(o.class_id),
        "T": [float(v) for v in o.bbox.translation],
        "R": [float(v) for v in o.bbox.rotation],
        "S": [float(v) for v in o.bbox.size],
    }
    # dataset objects carry a shape seed; generated ones a feature + code index
    if o.feature is not None:
        d["F"] = [float(v) for v in o.feature]
    if o.codebook_index is not None:
        d["codebook_index"] = int(o.codebook_index)
    if o.shape_seed is not None:
        d["shape_seed"] = int(o.shape_seed)
    return d


def _obj_from_json(d):
    return SceneObject(
        class_id=int(d["class"]),
        bbox=BoundingBoxParams(
            translation=np.array(d["T"], dtype=np.float64),
            rotation=np.array(d["R"], dtype=np.float64),
            size=np.array(d["S"], dtype=np.float64),
        ),
        shape_seed=d.get("shape_seed"),
        feature=None if d.get("F") is None else np.array(d["F"], dtype=np.float64),
        codebook_index=d.get("codebook_index"),
    )


def scene_to_json(r: SceneRecord):
    return {
        "scene_id": r.scene_id,
        "floor_plan": {
            "w": float(r.floor.half_extents[0]),
            "d": float(r.floor.half_extents[1]),
            "center": [float(v) for v in r.floor.center],
        },
        "objects": [_obj_to_json(o) for o in r.objects],
    }


def scene_from_json(d) -> SceneRecord:
    fp = d["floor_plan"]
    return SceneRecord(
        scene_id=d["scene_id"],
        floor=FloorPlan(half_extents=np.array([fp["w"], fp["d"]]), center=np.array(fp["center"])),
        objects=[_obj_from_json(o) for o in d["objects"]],
    )


def atomic_write_text(path, text):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_scenes(path, records, meta=None):
    payload = {"meta": meta or {}, "scenes": [scene_to_json(r) for r in records]}
    atomic_write_text(path, json.dumps(payload, indent=1, sort_keys=True))


def load_scenes(path):
    with open(path) as f:
        payload = json.load(f)
    return [scene_from_json(d) for d in payload["scenes"]], payload.get("meta", {})


# ---------------------------------------------------------------------------
# object extraction and scene-tensor assembly


def dataset_objects(records, n_points):
    """Canonical clouds and labels for every object across records.

    Returns (clouds, labels, owners): owners[i] = (record index, object index).
    """
    clouds, labels, owners = [], [], []
    for ri, r in enumerate(records):
        for oi, o in enumerate(r.objects):
            clouds.append(generate_shape(o.class_id, o.shape_seed, n_points).points)
            labels.append(o.class_id)
            owners.append((ri, oi))
    if not clouds:
        raise ValueError("dataset contains no objects")
    return np.array(clouds), np.array(labels), owners


def scenes_to_tensors(records, features, owners, layout: TupleLayout,
                      scene_scale: float, max_objects: int):
    """Stack scenes into (n, max_objects, width) tensors plus conditioning rows.

    `features` holds one 32-dim latent per dataset object, aligned with
    `owners`. Real rows are sorted by (class, translation) so the regression
    target is canonical; the remainder is empty-class padding.
    """
    feature_of = {owner: features[i] for i, owner in enumerate(owners)}
    X = np.tile(layout.padding_row(), (len(records), max_objects, 1))
    conds = np.zeros((len(records), 2))
    for ri, r in enumerate(records):
        if len(r.objects) > max_objects:
            raise ValueError(f"{r.scene_id}: {len(r.objects)} objects exceed max_objects={max_objects}")
        order = sorted(
            range(len(r.objects)),
            key=lambda oi: (r.objects[oi].class_id, tuple(r.objects[oi].bbox.translation)),
        )
        for j, oi in enumerate(order):
            o = r.objects[oi]
            X[ri, j] = layout.object_row(
                o.bbox.translation / scene_scale, o.bbox.rotation, o.bbox.size,
                o.class_id, feature_of[(ri, oi)],
            )
        conds[ri] = r.floor.features(scene_scale)
    return X, conds
