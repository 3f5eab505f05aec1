"""Point-cloud autoencoder around the partitioned codebook.

Four trainable variants, mirroring the ablation grid:
  v1 - plain VAE baseline (Gaussian reparameterized bottleneck, no codebook)
  v2 - vector quantization over one unpartitioned block
  v3 - vector quantization restricted to class partitions
  v4 - v3 plus usage-tracked reinitialization of dead codevectors

The estimator follows the scikit-learn protocol: hyperparameters in
__init__, training in fit(X, y), fitted state in trailing-underscore
attributes. X is a (n, n_points, 3) stack of canonical clouds, y the 0-based
shape class per cloud (shifted to the codebook's 1-based convention inside).
"""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import autodiff as ad
from .autodiff import Tensor
from .codebook import PartitionedCodebook, truncate_feature, vq_loss_terms
from .geometry import batch_chamfer
from .layers import DecoderNet, EncoderNet, Linear
from .optim import Adam
from .validation import check_class_labels, check_matrix, check_point_clouds

VARIANTS = ("v1", "v2", "v3", "v4")


class ClassPartitionedVQVAE(BaseEstimator):
    def __init__(self, n_classes=5, codes_per_class=64, code_dim=128, n_points=512,
                 variant="v4", lambda_cd=10.0, usage_decay=0.99, reinit_eps=1e-3,
                 cosine_lookup=False, kl_weight=1e-3, encoder_hidden=(64, 128, 256),
                 decoder_hidden=(256, 512), batch_size=32, n_steps=20000, lr=1e-3,
                 seed=0):
        self.n_classes = n_classes
        self.codes_per_class = codes_per_class
        self.code_dim = code_dim
        self.n_points = n_points
        self.variant = variant
        self.lambda_cd = lambda_cd
        self.usage_decay = usage_decay
        self.reinit_eps = reinit_eps
        self.cosine_lookup = cosine_lookup
        self.kl_weight = kl_weight
        self.encoder_hidden = encoder_hidden
        self.decoder_hidden = decoder_hidden
        self.batch_size = batch_size
        self.n_steps = n_steps
        self.lr = lr
        self.seed = seed

    # -- variant plumbing ----------------------------------------------------

    @property
    def _partitioned(self):
        return self.variant in ("v3", "v4")

    @property
    def _quantized(self):
        return self.variant in ("v2", "v3", "v4")

    def _codebook_classes(self, y):
        """Map dataset labels to the codebook's 1-based class convention."""
        if not self._quantized:
            raise ValueError(f"variant {self.variant} has no codebook")
        if self._partitioned:
            return np.asarray(y, dtype=np.intp) + 1
        return None  # single-block book: class-agnostic everywhere

    def _require_fitted(self):
        if not hasattr(self, "decoder_"):
            raise NotFittedError("this ClassPartitionedVQVAE instance is not fitted yet")

    def _init_networks(self, init_rng):
        """Build encoder/decoder/codebook for the configured variant; returns params."""
        self.encoder_ = EncoderNet(self.code_dim, self.encoder_hidden, init_rng)
        self.decoder_ = DecoderNet(self.code_dim, self.n_points, self.decoder_hidden, init_rng)
        params = self.encoder_.parameters() + self.decoder_.parameters()
        self.logvar_head_ = None
        self.codebook_ = None
        if self.variant == "v1":
            self.logvar_head_ = Linear(self.encoder_hidden[-1], self.code_dim, init_rng)
            params += self.logvar_head_.parameters()
        else:
            book_classes = self.n_classes if self._partitioned else 1
            book_codes = self.codes_per_class if self._partitioned else self.n_classes * self.codes_per_class
            self.codebook_ = PartitionedCodebook(
                book_classes, book_codes, self.code_dim,
                usage_decay=self.usage_decay, reinit_eps=self.reinit_eps,
                cosine_lookup=self.cosine_lookup, seed=int(init_rng.integers(2**31)),
            )
            params.append(self.codebook_.vectors)
        return params

    # -- training --------------------------------------------------------------

    def fit(self, X, y):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        X = check_point_clouds(X, self.n_points)
        y = check_class_labels(y, X.shape[0], self.n_classes)
        present = np.unique(y)
        if len(present) < self.n_classes:
            missing = sorted(set(range(self.n_classes)) - set(present.tolist()))
            raise ValueError(f"training set misses classes {missing}")

        init_rng = np.random.default_rng([self.seed, 0])
        batch_rng = np.random.default_rng([self.seed, 1])
        noise_rng = np.random.default_rng([self.seed, 2])
        params = self._init_networks(init_rng)

        opt = Adam(params, lr=self.lr)
        n = X.shape[0]
        bsz = min(self.batch_size, n)
        steps_per_epoch = max(n // bsz, 1)
        self.history_ = {"loss": [], "chamfer": [], "utilization": []}
        epoch_loss, epoch_cd = [], []

        for step in range(self.n_steps):
            idx = batch_rng.integers(0, n, size=bsz)
            pts = Tensor(X[idx])
            labels = y[idx]

            if self.variant == "v1":
                loss, cd = self._vae_step(pts, noise_rng)
            else:
                loss, cd = self._vq_step(pts, labels, bsz)
            ad.backward(loss)
            opt.step()

            epoch_loss.append(float(loss.data))
            epoch_cd.append(cd)
            if (step + 1) % steps_per_epoch == 0:
                self.history_["loss"].append(float(np.mean(epoch_loss)))
                self.history_["chamfer"].append(float(np.mean(epoch_cd)))
                self.history_["utilization"].append(
                    self.codebook_.active_fraction() if self.codebook_ else float("nan")
                )
                epoch_loss, epoch_cd = [], []
        return self

    def _vq_step(self, pts, labels, bsz):
        enc = self.encoder_(pts)
        classes = self._codebook_classes(labels)
        indices = self.codebook_.assign(enc.data, classes)
        if self._partitioned:
            # by construction every assignment lands in its label's block
            assert (indices // self.codebook_.codes_per_class == labels).all()
        z_q = self.codebook_.lookup(indices)
        cb_loss, commit_loss = vq_loss_terms(enc, z_q)
        recon = self.decoder_(ad.straight_through(z_q, enc))
        cd = batch_chamfer(recon, pts)
        loss = ad.add(
            ad.mul(cd, ad.Tensor(self.lambda_cd)),
            ad.mul(ad.add(cb_loss, commit_loss), ad.Tensor(1.0 / bsz)),
        )
        self.codebook_.update_usage(indices, bsz)
        if self.variant == "v4":
            anchors, mask = self.codebook_.select_anchors(enc.data, classes)
            self.codebook_.reinit_step(anchors, mask)
        return loss, float(cd.data)

    def _vae_step(self, pts, noise_rng):
        pooled = self._pooled(pts)
        mu = self.encoder_.head(pooled)
        logvar = self.logvar_head_(pooled)
        eps = Tensor(noise_rng.standard_normal(mu.data.shape))
        z = ad.add(mu, ad.mul(ad.exp(ad.mul(logvar, Tensor(0.5))), eps))
        recon = self.decoder_(z)
        cd = batch_chamfer(recon, pts)
        kl_inner = ad.sub(ad.add(Tensor(1.0), logvar), ad.add(ad.square(mu), ad.exp(logvar)))
        kl = ad.mul(ad.sum_along(kl_inner), Tensor(-0.5 / mu.data.shape[0]))
        loss = ad.add(ad.mul(cd, Tensor(self.lambda_cd)), ad.mul(kl, Tensor(self.kl_weight)))
        return loss, float(cd.data)

    def _pooled(self, pts):
        h = pts if isinstance(pts, Tensor) else Tensor(pts)
        for layer in self.encoder_.point_layers:
            h = ad.relu(layer(h))
        return ad.max_along(h, axis=1)

    # -- inference -------------------------------------------------------------

    def encode(self, X) -> np.ndarray:
        """Latents for canonical clouds; permutation-invariant, deterministic."""
        self._require_fitted()
        X = check_point_clouds(X, self.n_points)
        with ad.no_grad():
            return self.encoder_(Tensor(X)).data

    def assign_codes(self, X, y=None) -> np.ndarray:
        """Codebook index per cloud (class-restricted for partitioned variants)."""
        self._require_fitted()
        enc = self.encode(X)
        classes = None
        if self._partitioned:
            if y is None:
                raise ValueError("partitioned variants need class labels to assign codes")
            classes = check_class_labels(y, enc.shape[0], self.n_classes) + 1
        elif not self._quantized:
            raise ValueError("v1 baseline has no codebook")
        return self.codebook_.assign(enc, classes)

    def transform(self, X, y=None) -> np.ndarray:
        """Truncated quantized latents (n, 32): the flow model's feature targets."""
        indices = self.assign_codes(X, y)
        return truncate_feature(self.codebook_.vectors.data[indices])

    def fit_transform(self, X, y=None):
        return self.fit(X, y).transform(X, y)

    def decode_latents(self, Z) -> np.ndarray:
        """Decode (n, code_dim) latents into (n, n_points, 3) clouds."""
        self._require_fitted()
        Z = check_matrix(Z, self.code_dim, name="latents")
        with ad.no_grad():
            return self.decoder_(Tensor(Z)).data

    def inverse_transform(self, F, y=None):
        """Decode generated 32-dim features via the class-aware inverse look-up.

        Returns (clouds, codebook indices). For partitioned variants y holds
        the generated 0-based classes; the unpartitioned v2 ignores classes.
        """
        self._require_fitted()
        if not self._quantized:
            raise ValueError("v1 baseline has no codebook to look up")
        F = check_matrix(F, name="features")
        if self._partitioned:
            if y is None:
                raise ValueError("partitioned variants need class labels for the look-up")
            classes = check_class_labels(y, F.shape[0], self.n_classes) + 1
        else:
            classes = np.ones(F.shape[0], dtype=np.intp)
        picks = np.empty(F.shape[0], dtype=np.intp)
        latents = np.empty((F.shape[0], self.code_dim))
        for i in range(F.shape[0]):
            picks[i], latents[i] = self.codebook_.inverse_lookup(F[i], int(classes[i]))
        return self.decode_latents(latents), picks

    def reconstruct(self, X, y=None) -> np.ndarray:
        """Encode -> quantize -> decode round trip (v1 decodes the latent mean)."""
        self._require_fitted()
        if self.variant == "v1":
            X = check_point_clouds(X, self.n_points)
            with ad.no_grad():
                return self.decoder_(self.encoder_.head(self._pooled(Tensor(X)))).data
        indices = self.assign_codes(X, y)
        return self.decode_latents(self.codebook_.vectors.data[indices])

    def round_trip_chamfer(self, X, y=None) -> float:
        """Mean chamfer distance between clouds and their reconstructions."""
        from .geometry import chamfer_distance

        recon = self.reconstruct(X, y)
        X = check_point_clouds(X, self.n_points)
        return float(np.mean([chamfer_distance(X[i], recon[i]) for i in range(X.shape[0])]))


def build_latent_dataset(model: ClassPartitionedVQVAE, X, y):
    """Per-object truncated quantized latents plus their codebook indices."""
    model._require_fitted()
    features = model.transform(X, y)
    indices = model.assign_codes(X, y)
    return features, indices
