"""Linear layers and small nets built on the autodiff tensors."""

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class Linear:
    def __init__(self, n_in, n_out, rng):
        bound = 1.0 / np.sqrt(n_in)
        self.weight = Tensor(rng.uniform(-bound, bound, size=(n_in, n_out)), requires_grad=True)
        self.bias = Tensor(np.zeros(n_out), requires_grad=True)

    def __call__(self, x):
        return ad.add(ad.matmul(x, self.weight), self.bias)

    def parameters(self):
        return [self.weight, self.bias]


class EncoderNet:
    """Permutation-invariant point-cloud encoder: shared per-point MLP, max pool, head."""

    def __init__(self, code_dim, hidden=(64, 128, 256), rng=None):
        rng = rng or np.random.default_rng(0)
        self.hidden = tuple(hidden)
        self.code_dim = code_dim
        dims = (3,) + self.hidden
        self.point_layers = [Linear(dims[i], dims[i + 1], rng) for i in range(len(self.hidden))]
        self.head = Linear(dims[-1], code_dim, rng)

    def __call__(self, points):
        """points: Tensor (batch, n_points, 3) -> latents (batch, code_dim)."""
        h = points if isinstance(points, Tensor) else Tensor(points)
        for layer in self.point_layers:
            h = ad.relu(layer(h))
        pooled = ad.max_along(h, axis=1)
        return self.head(pooled)

    def parameters(self):
        out = []
        for layer in self.point_layers:
            out += layer.parameters()
        return out + self.head.parameters()

    @property
    def layers(self):
        return self.point_layers + [self.head]


class DecoderNet:
    """Latent -> point cloud MLP; tanh keeps coordinates in [-1, 1]."""

    def __init__(self, code_dim, n_points, hidden=(256, 512), rng=None):
        rng = rng or np.random.default_rng(0)
        self.hidden = tuple(hidden)
        self.n_points = n_points
        self.code_dim = code_dim
        dims = (code_dim,) + self.hidden
        self.layers = [Linear(dims[i], dims[i + 1], rng) for i in range(len(self.hidden))]
        self.out = Linear(dims[-1], n_points * 3, rng)

    def __call__(self, z):
        h = z if isinstance(z, Tensor) else Tensor(z)
        for layer in self.layers:
            h = ad.relu(layer(h))
        flat = ad.tanh(self.out(h))
        return ad.reshape(flat, (flat.data.shape[0], self.n_points, 3))

    def parameters(self):
        out = []
        for layer in self.layers:
            out += layer.parameters()
        return out + self.out.parameters()

    @property
    def all_layers(self):
        return self.layers + [self.out]


def net_blobs(prefix, layers):
    """Named weight arrays in a stable order, for bundle serialization."""
    blobs = {}
    for i, layer in enumerate(layers):
        blobs[f"{prefix}.{i}.weight"] = layer.weight.data
        blobs[f"{prefix}.{i}.bias"] = layer.bias.data
    return blobs


def load_net_blobs(prefix, layers, blobs):
    for i, layer in enumerate(layers):
        layer.weight.data = np.array(blobs[f"{prefix}.{i}.weight"], dtype=np.float64)
        layer.bias.data = np.array(blobs[f"{prefix}.{i}.bias"], dtype=np.float64)
