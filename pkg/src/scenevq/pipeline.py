"""End-to-end stages: dataset generation, two-stage training, sampling, eval.

Every stage is a plain function over paths + RunConfig so the CLI stays thin
and tests can drive stages directly. All outputs are re-readable by the
package (scene JSON, bundles, PLY, CSV reports).
"""

import json
import os
import time

import numpy as np

from .autoencoder import ClassPartitionedVQVAE, build_latent_dataset
from .bundle import load_flow, load_vqvae, save_flow, save_vqvae
from .config import RunConfig
from .evaluate import build_reference_bank, class_histogram, evaluate_generation, write_report
from .flowmatch import SceneFlowMatcher, TupleLayout, finalize_objects
from .geometry import FloorPlan, apply_bbox
from .plyio import write_ply_points
from .scenes import (
    SceneObject,
    SceneRecord,
    atomic_write_text,
    dataset_objects,
    gen_dataset,
    load_scenes,
    save_scenes,
    scene_from_json,
    scene_to_json,
    scenes_to_tensors,
)


def _write_history_csv(path, columns, rows):
    lines = [",".join(columns)]
    lines += [",".join(repr(v) for v in row) for row in rows]
    atomic_write_text(path, "\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# stage: dataset


def run_gen_data(out_dir, n_scenes, seed, cfg: RunConfig):
    train, test = gen_dataset(n_scenes, seed, cfg)
    meta = {"seed": seed, "n_scenes": n_scenes, "config": cfg.to_dict()}
    save_scenes(os.path.join(out_dir, "train.json"), train, {**meta, "split": "train"})
    save_scenes(os.path.join(out_dir, "test.json"), test, {**meta, "split": "test"})
    return train, test


def load_dataset(data_dir):
    train, meta = load_scenes(os.path.join(data_dir, "train.json"))
    test, _ = load_scenes(os.path.join(data_dir, "test.json"))
    return train, test, meta


# ---------------------------------------------------------------------------
# stage: autoencoder training


def vae_from_config(cfg: RunConfig, variant=None, seed=0, steps=None):
    return ClassPartitionedVQVAE(
        n_classes=cfg.n_shape_classes,
        codes_per_class=cfg.codes_per_class,
        code_dim=cfg.code_dim,
        n_points=cfg.n_points,
        variant=variant or cfg.vae_variant,
        lambda_cd=cfg.lambda_cd,
        usage_decay=cfg.usage_decay,
        reinit_eps=cfg.reinit_eps,
        cosine_lookup=cfg.cosine_lookup,
        kl_weight=cfg.kl_weight,
        encoder_hidden=cfg.encoder_hidden,
        decoder_hidden=cfg.decoder_hidden,
        batch_size=cfg.vae_batch,
        n_steps=steps or cfg.vae_steps,
        lr=cfg.vae_lr,
        seed=seed,
    )


def run_train_cpvqvae(data_dir, out_dir, cfg: RunConfig, variant=None, seed=0, steps=None):
    variant = variant or cfg.vae_variant
    train_records, _, _ = load_dataset(data_dir)
    X, y, _ = dataset_objects(train_records, cfg.n_points)
    model = vae_from_config(cfg, variant, seed, steps).fit(X, y)
    path = os.path.join(out_dir, f"vae_{variant}.bundle")
    save_vqvae(path, model, {"seed": seed, "data_dir": os.path.abspath(data_dir)})
    hist = model.history_
    _write_history_csv(
        os.path.join(out_dir, f"vae_{variant}_history.csv"),
        ["epoch", "loss", "chamfer", "utilization"],
        [(i, hist["loss"][i], hist["chamfer"][i], hist["utilization"][i])
         for i in range(len(hist["loss"]))],
    )
    return model, path


# ---------------------------------------------------------------------------
# stage: flow-model training


def flow_from_config(cfg: RunConfig, seed=0, steps=None):
    return SceneFlowMatcher(
        n_shape_classes=cfg.n_shape_classes,
        max_objects=cfg.max_objects,
        hidden=cfg.flow_hidden,
        time_dim=cfg.time_dim,
        cond_dim=2,
        lambda_translation=cfg.lambda_translation,
        lambda_rotation=cfg.lambda_rotation,
        lambda_size=cfg.lambda_size,
        lambda_class=cfg.lambda_class,
        lambda_feature=cfg.lambda_feature,
        batch_size=cfg.flow_batch,
        n_steps=steps or cfg.flow_steps,
        lr=cfg.flow_lr,
        seed=seed,
    )


def run_train_lfmm(data_dir, vae_bundle, out_dir, cfg: RunConfig, seed=0, steps=None):
    if not os.path.exists(vae_bundle):
        raise FileNotFoundError(f"autoencoder bundle not found: {vae_bundle}")
    train_records, _, _ = load_dataset(data_dir)
    vae = load_vqvae(vae_bundle)
    X, y, owners = dataset_objects(train_records, cfg.n_points)
    features, _ = build_latent_dataset(vae, X, y)
    layout = TupleLayout(cfg.n_shape_classes)
    tensors, conds = scenes_to_tensors(
        train_records, features, owners, layout, cfg.scene_scale, cfg.max_objects
    )
    model = flow_from_config(cfg, seed, steps).fit(tensors, conds)
    path = os.path.join(out_dir, "lfmm.bundle")
    save_flow(path, model, {"seed": seed, "vae_bundle": os.path.abspath(vae_bundle)})
    _write_history_csv(
        os.path.join(out_dir, "lfmm_history.csv"),
        ["step", "loss"],
        list(enumerate(model.history_)),
    )
    return model, path


# ---------------------------------------------------------------------------
# stage: sampling


def sample_floor_plans(n, seed, cfg: RunConfig):
    rng = np.random.default_rng([seed, 900])
    return [
        FloorPlan(half_extents=rng.uniform(cfg.floor_min, cfg.floor_max, size=2))
        for _ in range(n)
    ]


def generate_scenes(vae, flow, floors, cfg: RunConfig, n_steps=None, seed=0):
    """Sample scene tensors, finalize rows, look up codevectors, decode clouds.

    Returns (records, decoded) where decoded pairs each object's generated
    class with its decoded canonical cloud, in record order.
    """
    n_steps = n_steps or cfg.sample_steps
    conds = np.stack([f.features(cfg.scene_scale) for f in floors])
    tensors = flow.sample(conds, n_steps=n_steps, seed=seed)
    return _finalize_and_decode(tensors, floors, vae, flow, cfg)


def run_sample(vae_bundle, lfmm_bundle, out_dir, n_scenes, cfg: RunConfig,
               n_steps=None, seed=0, write_ply=True):
    vae = load_vqvae(vae_bundle)
    flow = load_flow(lfmm_bundle)
    floors = sample_floor_plans(n_scenes, seed, cfg)
    records, decoded = generate_scenes(vae, flow, floors, cfg, n_steps=n_steps, seed=seed)

    scene_dir = os.path.join(out_dir, "scenes")
    os.makedirs(scene_dir, exist_ok=True)
    k = 0
    for r in records:
        atomic_write_text(
            os.path.join(scene_dir, f"{r.scene_id}.json"),
            json.dumps(scene_to_json(r), indent=1, sort_keys=True),
        )
        if write_ply:
            placed = []
            for o in r.objects:
                cloud = decoded[k][1]
                k += 1
                write_ply_points(
                    os.path.join(scene_dir, f"{r.scene_id}_{o.codebook_index:04d}_obj.ply"), cloud
                )
                placed.append(apply_bbox(cloud, o.bbox))
            if placed:
                write_ply_points(
                    os.path.join(scene_dir, f"{r.scene_id}.ply"), np.concatenate(placed)
                )
        else:
            k += len(r.objects)
    return records, decoded


def load_generated(scene_dir):
    records = []
    for name in sorted(os.listdir(scene_dir)):
        if name.endswith(".json"):
            with open(os.path.join(scene_dir, name)) as f:
                records.append(scene_from_json(json.load(f)))
    if not records:
        raise ValueError(f"no generated scenes found under {scene_dir}")
    return records


# ---------------------------------------------------------------------------
# stage: evaluation


def decode_generated(records, vae):
    """(class, cloud) per generated object, decoded from its codebook index."""
    pairs = []
    indices, classes = [], []
    for r in records:
        for o in r.objects:
            if o.codebook_index is None:
                raise ValueError(f"{r.scene_id}: object lacks a codebook index")
            indices.append(o.codebook_index)
            classes.append(o.class_id)
    if indices:
        clouds = vae.decode_latents(vae.codebook_.vectors.data[np.array(indices)])
        pairs = list(zip(classes, clouds))
    return pairs


def run_eval(generated_dir, data_dir, vae_bundle, out_dir, cfg: RunConfig = None):
    cfg = cfg or RunConfig()
    vae = load_vqvae(vae_bundle)
    _, test_records, _ = load_dataset(data_dir)
    generated = load_generated(os.path.join(generated_dir, "scenes"))
    decoded = decode_generated(generated, vae)
    bank = build_reference_bank(test_records, vae.n_points, cfg.n_shape_classes)
    report = evaluate_generation(
        decoded, bank, class_histogram(test_records, cfg.n_shape_classes),
        utilization=vae.codebook_.active_fraction() if vae.codebook_ is not None else None,
        n_scenes=len(generated),
    )
    write_report(out_dir, report)
    return report


# ---------------------------------------------------------------------------
# ablations


def run_ablate_variants(data_dir, out_dir, cfg: RunConfig, seed=0, steps=None,
                        variants=("v1", "v2", "v3", "v4")):
    """Train every autoencoder variant on the same data and seed; report
    held-out reconstruction quality and codebook utilization."""
    train_records, test_records, _ = load_dataset(data_dir)
    X, y, _ = dataset_objects(train_records, cfg.n_points)
    Xt, yt, _ = dataset_objects(test_records, cfg.n_points)
    rows = []
    models = {}
    for variant in variants:
        model = vae_from_config(cfg, variant, seed, steps).fit(X, y)
        models[variant] = model
        save_vqvae(os.path.join(out_dir, f"vae_{variant}.bundle"), model, {"seed": seed})
        cd = model.round_trip_chamfer(Xt, yt)
        p2m = _held_out_p2m(model, test_records, cfg)
        util = model.codebook_.active_fraction() if model.codebook_ is not None else float("nan")
        rows.append((variant, model.history_["loss"][-1], util, cd * 1e3, p2m * 1e3))
    _write_history_csv(
        os.path.join(out_dir, "ablation_variants.csv"),
        ["variant", "final_loss", "utilization", "heldout_cd_x1e3", "heldout_p2m_x1e3"],
        rows,
    )
    return models, rows


def _held_out_p2m(model, records, cfg: RunConfig):
    from .geometry import class_mesh, point2mesh_distance

    X, y, owners = dataset_objects(records, cfg.n_points)
    recon = model.reconstruct(X, y)
    vals = []
    for i, (ri, oi) in enumerate(owners):
        o = records[ri].objects[oi]
        vals.append(point2mesh_distance(recon[i], class_mesh(o.class_id, o.shape_seed)))
    return float(np.mean(vals))


def run_ablate_steps(vae_bundle, lfmm_bundle, data_dir, out_dir, cfg: RunConfig,
                     seed=0, steps_list=(10, 100, 1000), n_scenes=200):
    """Sweep the Euler step count: sampling runtime and distribution metrics."""
    vae = load_vqvae(vae_bundle)
    flow = load_flow(lfmm_bundle)
    _, test_records, _ = load_dataset(data_dir)
    bank = build_reference_bank(test_records, vae.n_points, cfg.n_shape_classes)
    data_counts = class_histogram(test_records, cfg.n_shape_classes)
    floors = sample_floor_plans(n_scenes, seed, cfg)
    conds = np.stack([f.features(cfg.scene_scale) for f in floors])

    rows = []
    for n_steps in steps_list:
        t0 = time.perf_counter()
        tensors = flow.sample(conds, n_steps=n_steps, seed=seed)
        runtime = time.perf_counter() - t0
        records, decoded = _finalize_and_decode(tensors, floors, vae, flow, cfg)
        report = evaluate_generation(decoded, bank, data_counts, n_scenes=len(records))
        rows.append((n_steps, runtime, report["ckl_x1e2"], report["class_consistency"]))
    _write_history_csv(
        os.path.join(out_dir, "ablation_steps.csv"),
        ["n_steps", "runtime_s", "ckl_x1e2", "class_consistency"],
        rows,
    )
    return rows


def _finalize_and_decode(tensors, floors, vae, flow, cfg):
    records, decoded = [], []
    for i, x_hat in enumerate(tensors):
        objs = finalize_objects(x_hat, flow.layout_, cfg.scene_scale)
        scene_objects = []
        if objs:
            feats = np.array([f for _, _, f in objs])
            classes = np.array([c for _, c, _ in objs])
            clouds, picks = vae.inverse_transform(feats, classes)
            for j, (bbox, class_id, feat) in enumerate(objs):
                scene_objects.append(SceneObject(
                    class_id=class_id, bbox=bbox, feature=feat, codebook_index=int(picks[j]),
                ))
                decoded.append((class_id, clouds[j]))
        records.append(SceneRecord(f"generated_{i:05d}", floors[i], scene_objects))
    return records, decoded
