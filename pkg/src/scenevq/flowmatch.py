"""Latent flow matching over per-object scene tuples.

Each scene is a fixed-height stack of object rows [T | R | S | C | F]:
translation (3), rotation pair (2), size (3), class logits (shape classes
plus one trailing "empty" padding class), and the 32-dim quantized feature.
A permutation-equivariant velocity network regresses the constant transport
field between Gaussian noise and data rows; Euler integration from t=0 to 1
generates scenes.
"""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import autodiff as ad
from .autodiff import Tensor
from .codebook import FEATURE_DIM
from .geometry import BoundingBoxParams, normalize_rotation
from .layers import Linear
from .optim import Adam


class TupleLayout:
    """Fixed attribute offsets shared by the loss, the sampler, and the decoder."""

    def __init__(self, n_shape_classes=5):
        self.n_shape_classes = n_shape_classes
        self.n_scene_classes = n_shape_classes + 1  # trailing empty class pads scenes
        self.empty_class = n_shape_classes
        n_c = self.n_scene_classes
        self.slices = {
            "T": slice(0, 3),
            "R": slice(3, 5),
            "S": slice(5, 8),
            "C": slice(8, 8 + n_c),
            "F": slice(8 + n_c, 8 + n_c + FEATURE_DIM),
        }
        self.width = 8 + n_c + FEATURE_DIM

    def object_row(self, translation, rotation, size, class_id, feature):
        row = np.zeros(self.width)
        row[self.slices["T"]] = translation
        row[self.slices["R"]] = rotation
        row[self.slices["S"]] = size
        row[self.slices["C"].start + class_id] = 1.0
        row[self.slices["F"]] = feature
        return row

    def padding_row(self):
        row = np.zeros(self.width)
        row[self.slices["R"]] = (1.0, 0.0)
        row[self.slices["C"].start + self.empty_class] = 1.0
        return row


def interpolate(x0, x1, t: float):
    """Linear interpolation (1-t)*x0 + t*x1 for t in [0, 1]."""
    x0, x1 = np.asarray(x0, dtype=np.float64), np.asarray(x1, dtype=np.float64)
    if x0.shape != x1.shape:
        raise ValueError(f"interpolate: incompatible shapes {x0.shape} and {x1.shape}")
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"interpolate: t={t} outside [0, 1]")
    return (1.0 - t) * x0 + t * x1


def time_embedding(t, dim):
    """Sinusoidal features of t in [0, 1]; frequencies pi * 2^i."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.pi * (2.0 ** np.arange(half))
    ang = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


class VelocityNet:
    """Per-object MLP with a mean-pooled scene context, so the field is
    permutation-equivariant over object rows. Conditioning (floor plan) and
    the time embedding are concatenated onto every row."""

    def __init__(self, width, cond_dim=2, hidden=256, time_dim=16, rng=None):
        rng = rng or np.random.default_rng(0)
        self.width = width
        self.cond_dim = cond_dim
        self.hidden = hidden
        self.time_dim = time_dim
        self.enc = Linear(width + time_dim + cond_dim, hidden, rng)
        self.mix = Linear(2 * hidden, hidden, rng)
        self.mix2 = Linear(hidden, hidden, rng)
        self.head = Linear(hidden, width, rng)

    def __call__(self, x, t, cond=None):
        """x: Tensor (batch, rows, width); t: scalar or (batch,); cond: (batch, cond_dim)."""
        x = x if isinstance(x, Tensor) else Tensor(x)
        bsz, rows = x.data.shape[0], x.data.shape[1]
        t = np.broadcast_to(np.atleast_1d(np.asarray(t, dtype=np.float64)), (bsz,))
        temb = np.repeat(time_embedding(t, self.time_dim)[:, None, :], rows, axis=1)
        parts = [x, Tensor(temb)]
        if self.cond_dim:
            if cond is None:
                raise ValueError("velocity net expects a conditioning vector")
            cond = np.asarray(cond, dtype=np.float64).reshape(bsz, self.cond_dim)
            parts.append(Tensor(np.repeat(cond[:, None, :], rows, axis=1)))
        h = ad.relu(self.enc(ad.concat(parts, axis=2)))
        ctx = ad.mean_along(h, axis=1)
        ctx = ad.broadcast_to(ad.reshape(ctx, (bsz, 1, self.hidden)), (bsz, rows, self.hidden))
        h = ad.relu(self.mix(ad.concat([h, ctx], axis=2)))
        h = ad.relu(self.mix2(h))
        return self.head(h)

    def parameters(self):
        return (self.enc.parameters() + self.mix.parameters()
                + self.mix2.parameters() + self.head.parameters())

    @property
    def layers(self):
        return [self.enc, self.mix, self.mix2, self.head]


def fm_loss(vnet, x0, x1, t, cond=None, lambdas=None, slices=None):
    """Attribute-weighted velocity regression against the x1 - x0 target.

    Batched: x0, x1 are (batch, rows, width); t is (batch,) or a float. Each
    attribute slice J contributes lambda_J * ||v_J - (x1 - x0)_J||^2, summed
    over rows and averaged over the batch.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64)
    if x0.shape != x1.shape:
        raise ValueError(f"fm_loss: incompatible shapes {x0.shape} and {x1.shape}")
    t_arr = np.broadcast_to(np.atleast_1d(np.asarray(t, dtype=np.float64)), (x0.shape[0],))
    if t_arr.min() < 0.0 or t_arr.max() > 1.0:
        raise ValueError("fm_loss: t outside [0, 1]")
    if slices is None:
        slices = {"all": slice(0, x0.shape[-1])}
    lambdas = lambdas or {}

    x_t = (1.0 - t_arr)[:, None, None] * x0 + t_arr[:, None, None] * x1
    v = vnet(Tensor(x_t), t_arr, cond)
    diff = ad.sub(v, Tensor(x1 - x0))
    total = None
    for name, sl in slices.items():
        lam = lambdas.get(name, 1.0)
        term = ad.mul(ad.sum_along(ad.square(ad.slice_along(diff, 2, sl.start, sl.stop))),
                      Tensor(lam))
        total = term if total is None else ad.add(total, term)
    return ad.mul(total, Tensor(1.0 / x0.shape[0]))


def train_velocity_field(data, cond, slices, lambdas, *, hidden=256, time_dim=16,
                         n_steps=6000, batch_size=64, lr=1e-3, seed=0):
    """Fit a VelocityNet on (n, rows, width) samples; returns (net, loss history)."""
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 3 or data.shape[0] == 0:
        raise ValueError(f"expected a nonempty (n, rows, width) dataset, got {data.shape}")
    cond_dim = 0 if cond is None else np.asarray(cond).shape[1]
    init_rng = np.random.default_rng([seed, 0])
    batch_rng = np.random.default_rng([seed, 1])
    net = VelocityNet(data.shape[-1], cond_dim=cond_dim, hidden=hidden,
                      time_dim=time_dim, rng=init_rng)
    opt = Adam(net.parameters(), lr=lr)
    bsz = min(batch_size, data.shape[0])
    history = []
    for _ in range(n_steps):
        idx = batch_rng.integers(0, data.shape[0], size=bsz)
        x1 = data[idx]
        x0 = batch_rng.standard_normal(x1.shape)
        t = batch_rng.uniform(size=bsz)
        loss = fm_loss(net, x0, x1, t, None if cond is None else cond[idx], lambdas, slices)
        ad.backward(loss)
        opt.step()
        history.append(float(loss.data))
    return net, history


def sample_velocity_field(vnet, n_samples, rows, width, cond=None, n_steps=100, seed=0):
    """Euler integration of the learned field from N(0, I) over n_steps."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n_samples, rows, width))
    with ad.no_grad():
        for step in range(n_steps):
            t = np.full(n_samples, step / n_steps)
            v = vnet(Tensor(x), t, cond)
            x = x + v.data / n_steps
    return x


def finalize_objects(x_hat, layout: TupleLayout, scene_scale=1.0):
    """Rows -> (bbox, 0-based shape class, feature); empty-class rows are dropped.

    Rotations are renormalized and sizes clamped positive, since generated
    rows satisfy neither constraint exactly.
    """
    x_hat = np.asarray(x_hat, dtype=np.float64)
    out = []
    for row in x_hat:
        class_id = int(np.argmax(row[layout.slices["C"]]))
        if class_id == layout.empty_class:
            continue
        bbox = BoundingBoxParams(
            translation=row[layout.slices["T"]] * scene_scale,
            rotation=normalize_rotation(row[layout.slices["R"]]),
            size=np.maximum(row[layout.slices["S"]], 1e-3),
        )
        out.append((bbox, class_id, row[layout.slices["F"]].copy()))
    return out


class SceneFlowMatcher(BaseEstimator):
    """Scene-tensor generator: fit on stacked object tuples, sample new scenes.

    X is (n_scenes, max_objects, width) with rows laid out per TupleLayout;
    the conditioning array holds one floor-plan feature vector per scene.
    """

    def __init__(self, n_shape_classes=5, max_objects=8, hidden=256, time_dim=16,
                 cond_dim=2, lambda_translation=1.0, lambda_rotation=1.0,
                 lambda_size=1.0, lambda_class=1.0, lambda_feature=1.0,
                 batch_size=64, n_steps=6000, lr=1e-3, seed=0):
        self.n_shape_classes = n_shape_classes
        self.max_objects = max_objects
        self.hidden = hidden
        self.time_dim = time_dim
        self.cond_dim = cond_dim
        self.lambda_translation = lambda_translation
        self.lambda_rotation = lambda_rotation
        self.lambda_size = lambda_size
        self.lambda_class = lambda_class
        self.lambda_feature = lambda_feature
        self.batch_size = batch_size
        self.n_steps = n_steps
        self.lr = lr
        self.seed = seed

    def _lambdas(self):
        return {
            "T": self.lambda_translation,
            "R": self.lambda_rotation,
            "S": self.lambda_size,
            "C": self.lambda_class,
            "F": self.lambda_feature,
        }

    def fit(self, X, conditioning):
        layout = TupleLayout(self.n_shape_classes)
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 3 or X.shape[1:] != (self.max_objects, layout.width):
            raise ValueError(
                f"expected scene tensors of shape (n, {self.max_objects}, {layout.width}), got {X.shape}"
            )
        if X.shape[0] == 0:
            raise ValueError("empty scene dataset")
        cond = np.asarray(conditioning, dtype=np.float64).reshape(X.shape[0], self.cond_dim)
        self.layout_ = layout
        self.velocity_net_, self.history_ = train_velocity_field(
            X, cond, layout.slices, self._lambdas(),
            hidden=self.hidden, time_dim=self.time_dim, n_steps=self.n_steps,
            batch_size=self.batch_size, lr=self.lr, seed=self.seed,
        )
        return self

    def _require_fitted(self):
        if not hasattr(self, "velocity_net_"):
            raise NotFittedError("this SceneFlowMatcher instance is not fitted yet")

    def sample(self, conditioning, n_steps=100, seed=0):
        """Generate one scene tensor per conditioning row."""
        self._require_fitted()
        cond = np.asarray(conditioning, dtype=np.float64)
        cond = cond.reshape(cond.shape[0], self.cond_dim)
        return sample_velocity_field(
            self.velocity_net_, cond.shape[0], self.max_objects, self.layout_.width,
            cond=cond, n_steps=n_steps, seed=seed,
        )
