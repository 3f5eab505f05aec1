"""Point-cloud scene generation: class-partitioned VQ-VAE + latent flow matching."""

from .autodiff import Tensor, backward, forward_op, no_grad
from .autoencoder import ClassPartitionedVQVAE, build_latent_dataset
from .bundle import load_flow, load_vqvae, save_flow, save_vqvae
from .codebook import FEATURE_DIM, PartitionedCodebook, truncate_feature, vq_loss_terms
from .config import RunConfig, load_config
from .flowmatch import (
    SceneFlowMatcher,
    TupleLayout,
    finalize_objects,
    fm_loss,
    interpolate,
    sample_velocity_field,
    train_velocity_field,
)
from .geometry import (
    BoundingBoxParams,
    FloorPlan,
    PointCloud,
    TriangleMesh,
    apply_bbox,
    categorical_kl,
    chamfer_distance,
    class_mesh,
    class_prototype,
    generate_shape,
    invert_bbox,
    normalize_rotation,
    point2mesh_distance,
)
from .optim import Adam
from .scenes import SceneObject, SceneRecord, gen_dataset

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "BoundingBoxParams",
    "ClassPartitionedVQVAE",
    "FEATURE_DIM",
    "FloorPlan",
    "PartitionedCodebook",
    "PointCloud",
    "RunConfig",
    "SceneFlowMatcher",
    "SceneObject",
    "SceneRecord",
    "Tensor",
    "TriangleMesh",
    "TupleLayout",
    "apply_bbox",
    "backward",
    "build_latent_dataset",
    "categorical_kl",
    "chamfer_distance",
    "class_mesh",
    "class_prototype",
    "finalize_objects",
    "fm_loss",
    "forward_op",
    "gen_dataset",
    "generate_shape",
    "interpolate",
    "invert_bbox",
    "load_config",
    "load_flow",
    "load_vqvae",
    "no_grad",
    "normalize_rotation",
    "point2mesh_distance",
    "sample_velocity_field",
    "save_flow",
    "save_vqvae",
    "train_velocity_field",
    "truncate_feature",
    "vq_loss_terms",
    "__version__",
]
