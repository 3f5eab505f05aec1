"""Adam optimizer over autodiff leaf tensors."""

import numpy as np


class Adam:
    """Adam with the usual defaults; `step` updates params in place and clears grads."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self._buf = [np.empty_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        mc = 1.0 - b1**self.t
        vc = 1.0 - b2**self.t
        for i, p in enumerate(self.params):
            if p.grad is None:
                raise ValueError(f"Adam.step: parameter {i} has no gradient")
            g = p.grad
            m, v, buf = self.m[i], self.v[i], self._buf[i]
            m *= b1
            m += (1.0 - b1) * g
            np.multiply(g, g, out=buf)
            v *= b2
            buf *= 1.0 - b2
            v += buf
            np.multiply(v, 1.0 / vc, out=buf)
            np.sqrt(buf, out=buf)
            buf += self.eps
            np.divide(m, buf, out=buf)
            buf *= self.lr / mc
            p.data -= buf
            p.grad = None

    def zero_grad(self):
        for p in self.params:
            p.grad = None
