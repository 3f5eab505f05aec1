"""Shared test helpers: finite-difference gradient oracle and tolerances."""

import numpy as np
import pytest

from scenevq import autodiff as ad
from scenevq.autodiff import Tensor

FD_STEP = 1e-5
FD_RTOL = 1e-4


def finite_diff_grad(f, x, h=FD_STEP):
    """Central finite differences of scalar f w.r.t. every entry of x."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat, gf = x.ravel(), g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * h)
    return g


def assert_grads_close(analytic, fd, rtol=FD_RTOL):
    analytic = np.zeros_like(fd) if analytic is None else analytic
    scale = max(1.0, float(np.abs(fd).max()))
    err = float(np.abs(analytic - fd).max())
    assert err <= rtol * scale, f"gradient mismatch: max abs err {err:.3e} vs scale {scale:.3e}"


def check_op_gradients(build, arrays, rng, rtol=FD_RTOL, h=FD_STEP):
    """Compare tape gradients of sum(build(*arrays) * w) against finite differences.

    `build` maps Tensors to an output Tensor; w is a fixed random projection
    so non-scalar outputs reduce to a scalar loss.
    """
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    out = build(*tensors)
    w = rng.standard_normal(out.data.shape)

    loss = ad.sum_along(ad.mul(out, Tensor(w)))
    ad.backward(loss)

    for i in range(len(arrays)):
        def scalar_f(xi, i=i):
            args = [Tensor(a) for a in arrays]
            args[i] = Tensor(xi)
            return float((build(*args).data * w).sum())

        fd = finite_diff_grad(scalar_f, arrays[i], h=h)
        assert_grads_close(tensors[i].grad, fd, rtol=rtol)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
