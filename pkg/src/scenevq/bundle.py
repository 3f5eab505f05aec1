"""Model bundle files: magic bytes, JSON metadata, raw float64 weight blobs.

Layout: b"CPVQ1\n" | uint64-LE json length | metadata JSON | blob bytes in
the declared order. The metadata lists every blob's name and shape and a
sha256 content hash over the blob bytes, verified on load.
"""

import hashlib
import json
import os
import struct
import tempfile

import numpy as np

from .autoencoder import ClassPartitionedVQVAE
from .flowmatch import SceneFlowMatcher, TupleLayout, VelocityNet
from .layers import load_net_blobs, net_blobs

MAGIC = b"CPVQ1\n"


def save_bundle(path, metadata: dict, blobs: dict):
    """Write metadata + named float64 arrays; atomic via temp file + rename."""
    ordered = list(blobs.items())
    payload = b"".join(np.ascontiguousarray(v, dtype="<f8").tobytes() for _, v in ordered)
    meta = dict(metadata)
    meta["blobs"] = [{"name": k, "shape": list(np.asarray(v).shape)} for k, v in ordered]
    meta["content_hash"] = hashlib.sha256(payload).hexdigest()
    head = json.dumps(meta, sort_keys=True).encode()

    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<Q", len(head)))
            f.write(head)
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_bundle(path):
    """Read (metadata, blobs); verifies the magic bytes and the content hash."""
    with open(path, "rb") as f:
        magic = f.read(len(MAGIC))
        if magic != MAGIC:
            raise ValueError(f"{path}: bad magic bytes {magic!r}")
        (head_len,) = struct.unpack("<Q", f.read(8))
        meta = json.loads(f.read(head_len).decode())
        payload = f.read()
    if hashlib.sha256(payload).hexdigest() != meta["content_hash"]:
        raise ValueError(f"{path}: content hash mismatch, file corrupt")
    blobs, offset = {}, 0
    for entry in meta["blobs"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=offset).reshape(shape)
        blobs[entry["name"]] = arr.astype(np.float64)
        offset += count * 8
    return meta, blobs


# ---------------------------------------------------------------------------
# estimator bundles


def _params_for_json(params):
    return {k: list(v) if isinstance(v, tuple) else v for k, v in params.items()}


def _params_from_json(params):
    return {k: tuple(v) if isinstance(v, list) else v for k, v in params.items()}


def save_vqvae(path, model: ClassPartitionedVQVAE, extra_meta=None):
    model._require_fitted()
    blobs = net_blobs("encoder", model.encoder_.layers)
    if model.logvar_head_ is not None:
        blobs.update(net_blobs("logvar", [model.logvar_head_]))
    blobs.update(net_blobs("decoder", model.decoder_.all_layers))
    if model.codebook_ is not None:
        blobs["codebook.vectors"] = model.codebook_.vectors.data
        blobs["codebook.usage"] = model.codebook_.usage
    meta = {
        "kind": "vqvae",
        "format_version": 1,
        "params": _params_for_json(model.get_params()),
    }
    meta.update(extra_meta or {})
    save_bundle(path, meta, blobs)


def load_vqvae(path) -> ClassPartitionedVQVAE:
    meta, blobs = load_bundle(path)
    if meta.get("kind") != "vqvae":
        raise ValueError(f"{path}: expected a vqvae bundle, got kind {meta.get('kind')!r}")
    model = ClassPartitionedVQVAE(**_params_from_json(meta["params"]))
    model._init_networks(np.random.default_rng(0))
    load_net_blobs("encoder", model.encoder_.layers, blobs)
    if model.logvar_head_ is not None:
        load_net_blobs("logvar", [model.logvar_head_], blobs)
    load_net_blobs("decoder", model.decoder_.all_layers, blobs)
    if model.codebook_ is not None:
        model.codebook_.vectors.data = np.array(blobs["codebook.vectors"])
        model.codebook_.usage = np.array(blobs["codebook.usage"])
    model.history_ = None
    return model


def save_flow(path, model: SceneFlowMatcher, extra_meta=None):
    model._require_fitted()
    blobs = net_blobs("velocity", model.velocity_net_.layers)
    meta = {
        "kind": "flow",
        "format_version": 1,
        "params": _params_for_json(model.get_params()),
    }
    meta.update(extra_meta or {})
    save_bundle(path, meta, blobs)


def load_flow(path) -> SceneFlowMatcher:
    meta, blobs = load_bundle(path)
    if meta.get("kind") != "flow":
        raise ValueError(f"{path}: expected a flow bundle, got kind {meta.get('kind')!r}")
    model = SceneFlowMatcher(**_params_from_json(meta["params"]))
    model.layout_ = TupleLayout(model.n_shape_classes)
    model.velocity_net_ = VelocityNet(
        model.layout_.width, cond_dim=model.cond_dim, hidden=model.hidden,
        time_dim=model.time_dim, rng=np.random.default_rng(0),
    )
    load_net_blobs("velocity", model.velocity_net_.layers, blobs)
    model.history_ = None
    return model
