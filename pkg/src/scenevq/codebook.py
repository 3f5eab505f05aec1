"""Class-partitioned vector-quantization codebook.

The codebook holds n_classes contiguous blocks of codes_per_class rows each.
Class labels here are 1-based: class c owns rows (c-1)*codes_per_class up to
c*codes_per_class (exclusive), matching the indicator convention used by the
quantizer, the anchor selection, and the inverse look-up. Dataset class ids
(0-based) are shifted by +1 at the autoencoder boundary.

Dead-code mitigation: per-step exponential usage tracking plus a usage-gated
convex move of each codevector toward its nearest same-class batch encoding.
Rarely used codes snap to an anchor almost entirely; active codes stay put.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

FEATURE_DIM = 32  # truncated latent length handed to the flow model


@dataclass
class QuantizationResult:
    index: int
    quantized: np.ndarray  # full codevector
    straight_through: np.ndarray  # forward-equal to `quantized`
    codebook_loss: float
    commitment_loss: float


def truncate_feature(z_q) -> np.ndarray:
    """First FEATURE_DIM entries of a quantized latent."""
    z_q = np.asarray(z_q, dtype=np.float64)
    if z_q.shape[-1] < FEATURE_DIM:
        raise ValueError(f"truncate_feature: need at least {FEATURE_DIM} entries, got {z_q.shape[-1]}")
    return z_q[..., :FEATURE_DIM].copy()


def vq_loss_terms(encoding: Tensor, z_q: Tensor):
    """Codebook and commitment losses with stop-gradient placement.

    codebook_loss   = ||sg(encoding) - z_q||^2   (updates codevectors only)
    commitment_loss = ||encoding - sg(z_q)||^2   (updates the encoder only)
    """
    encoding, z_q = ad.as_tensor(encoding), ad.as_tensor(z_q)
    if encoding.data.shape != z_q.data.shape:
        raise ValueError(
            f"vq_loss_terms: incompatible shapes {encoding.data.shape} and {z_q.data.shape}"
        )
    cb = ad.sum_along(ad.square(ad.sub(ad.stop_gradient(encoding), z_q)))
    commit = ad.sum_along(ad.square(ad.sub(encoding, ad.stop_gradient(z_q))))
    return cb, commit


class PartitionedCodebook:
    def __init__(self, n_classes, codes_per_class, code_dim,
                 usage_decay=0.99, reinit_eps=1e-3, cosine_lookup=False, seed=0):
        self.n_classes = int(n_classes)
        self.codes_per_class = int(codes_per_class)
        self.code_dim = int(code_dim)
        self.usage_decay = float(usage_decay)
        self.reinit_eps = float(reinit_eps)
        self.cosine_lookup = bool(cosine_lookup)
        n_total = self.n_classes * self.codes_per_class
        rng = np.random.default_rng(seed)
        bound = 1.0 / self.codes_per_class
        self.vectors = Tensor(rng.uniform(-bound, bound, size=(n_total, code_dim)), requires_grad=True)
        self.usage = np.zeros(n_total)

    @property
    def n_total(self) -> int:
        return self.n_classes * self.codes_per_class

    def class_of_code(self, k: int) -> int:
        return int(k) // self.codes_per_class + 1

    def class_block(self, c: int):
        if not 1 <= c <= self.n_classes:
            raise ValueError(f"class {c} out of range [1, {self.n_classes}]")
        return (c - 1) * self.codes_per_class, c * self.codes_per_class

    def indicator(self, c: int, k: int) -> int:
        """1 iff code k lies in class c's block."""
        lo, hi = self.class_block(c)
        if not 0 <= k < self.n_total:
            raise ValueError(f"code index {k} out of range [0, {self.n_total})")
        return int(lo <= k < hi)

    # -- quantization ------------------------------------------------------

    def _check_encoding(self, encoding):
        encoding = np.asarray(encoding, dtype=np.float64)
        if encoding.shape != (self.code_dim,):
            raise ValueError(f"encoding shape {encoding.shape} != ({self.code_dim},)")
        if np.isnan(encoding).any():
            raise ValueError("encoding contains NaN")
        return encoding

    def _result(self, encoding, k):
        z = self.vectors.data[k].copy()
        d = float(((encoding - z) ** 2).sum())
        return QuantizationResult(
            index=int(k), quantized=z, straight_through=z.copy(),
            codebook_loss=d, commitment_loss=d,
        )

    def quantize(self, encoding) -> QuantizationResult:
        """Nearest codevector over the whole book; ties break to the lowest index."""
        encoding = self._check_encoding(encoding)
        d = _sq_dists(encoding[None, :], self.vectors.data)[0]
        return self._result(encoding, int(d.argmin()))

    def quantize_class(self, encoding, c: int) -> QuantizationResult:
        """Nearest codevector within class c's block.

        The argmin is restricted to the block: comparing against zeroed
        out-of-class codevectors would let a small-norm encoding escape its
        class, which defeats the partitioning.
        """
        encoding = self._check_encoding(encoding)
        lo, hi = self.class_block(c)
        d = _sq_dists(encoding[None, :], self.vectors.data[lo:hi])[0]
        return self._result(encoding, lo + int(d.argmin()))

    def assign(self, encodings, classes=None) -> np.ndarray:
        """Vectorized batch quantization; `classes` (1-based) restricts per row."""
        encodings = np.asarray(encodings, dtype=np.float64)
        d = _sq_dists(encodings, self.vectors.data)  # (B, n_total)
        if classes is not None:
            code_class = np.repeat(np.arange(1, self.n_classes + 1), self.codes_per_class)
            d = np.where(np.asarray(classes)[:, None] == code_class[None, :], d, np.inf)
        return d.argmin(axis=1)

    def lookup(self, indices) -> Tensor:
        """Codebook rows as a graph node, so losses reach the selected rows."""
        return ad.gather(self.vectors, np.asarray(indices, dtype=np.intp), axis=0)

    # -- usage tracking and dead-code reinitialization ----------------------

    def update_usage(self, assignments, batch_size: int):
        """U <- decay*U + (1-decay)/B * per-code assignment counts."""
        if batch_size <= 0:
            raise ValueError("update_usage: batch_size must be positive")
        assignments = np.asarray(assignments, dtype=np.intp)
        if assignments.size and (assignments.min() < 0 or assignments.max() >= self.n_total):
            raise ValueError("update_usage: assignment index out of range")
        counts = np.bincount(assignments, minlength=self.n_total)
        self.usage = self.usage_decay * self.usage + (1.0 - self.usage_decay) / batch_size * counts

    def select_anchors(self, encodings, classes):
        """Nearest same-class batch encoding per codevector.

        Returns (anchors, mask); mask is False for codes whose class has no
        batch item this step (those codes are skipped by reinit_step).
        """
        encodings = np.asarray(encodings, dtype=np.float64)
        classes = np.asarray(classes)
        d = _sq_dists(encodings, self.vectors.data)  # (B, n_total)
        code_class = np.repeat(np.arange(1, self.n_classes + 1), self.codes_per_class)
        eligible = classes[:, None] == code_class[None, :]
        d = np.where(eligible, d, np.inf)
        best = d.argmin(axis=0)
        mask = eligible.any(axis=0)
        anchors = encodings[best]
        return anchors, mask

    def reinit_step(self, anchors, mask):
        """Move low-usage codevectors toward their anchors; active codes stay."""
        alpha = np.exp(
            -10.0 * self.usage * self.codes_per_class / (1.0 - self.usage_decay) - self.reinit_eps
        )
        upd = np.asarray(mask, dtype=bool)
        vecs = self.vectors.data
        vecs[upd] = (1.0 - alpha[upd, None]) * vecs[upd] + alpha[upd, None] * np.asarray(anchors)[upd]

    def active_fraction(self, threshold=None) -> float:
        """Share of codes whose tracked usage clears the dead-code threshold."""
        if threshold is None:
            threshold = 1.0 / (2.0 * self.n_total)
        return float((self.usage >= threshold).mean())

    # -- inverse look-up -----------------------------------------------------

    def inverse_lookup(self, f_hat, c_hat: int):
        """Best-scoring code in class c_hat against a generated feature.

        Scores are dot products of f_hat with truncated codevectors; with
        cosine_lookup the truncated rows are L2-normalized first. Returns
        (code index, full codevector).
        """
        f_hat = np.asarray(f_hat, dtype=np.float64)
        if f_hat.shape != (FEATURE_DIM,):
            raise ValueError(f"inverse_lookup: feature shape {f_hat.shape} != ({FEATURE_DIM},)")
        lo, hi = self.class_block(c_hat)
        prefix = self.vectors.data[lo:hi, :FEATURE_DIM]
        scores = prefix @ f_hat
        if self.cosine_lookup:
            scores = scores / np.maximum(np.linalg.norm(prefix, axis=1), 1e-12)
        k = lo + int(scores.argmax())
        return k, self.vectors.data[k].copy()


def _sq_dists(a, b):
    # ||a - b||^2 via the BLAS expansion; every quantization path shares this
    # helper so training-time and query-time argmins can never disagree
    d = (a * a).sum(axis=1)[:, None] - 2.0 * (a @ b.T) + (b * b).sum(axis=1)[None, :]
    return np.maximum(d, 0.0)
