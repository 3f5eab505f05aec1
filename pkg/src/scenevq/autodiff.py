"""Minimal reverse-mode autodiff over dense float64 arrays.

Values live in `Tensor` objects; every differentiable operation links its
output back to its inputs, forming an acyclic graph that `backward` walks in
reverse topological order. Calling `backward` twice without clearing grads
accumulates them additively. The op set is small and closed: exactly what the
point-cloud autoencoder and the velocity network need.
"""

from __future__ import annotations

import contextlib

import numpy as np

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (pure forward evaluation)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    """Dense float64 array plus optional gradient and graph back-references."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_kind")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self._kind = "leaf"

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def _accumulate(self, g):
        # first contribution copies (g may alias a buffer the caller reuses)
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64)
            if self.grad.shape != self.data.shape:
                self.grad = np.broadcast_to(self.grad, self.data.shape).copy()
        else:
            self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.shape}, kind={self._kind}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, as_tensor(other))

    def __radd__(self, other):
        return add(as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, as_tensor(other))

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, as_tensor(other))

    def __rmul__(self, other):
        return mul(as_tensor(other), self)

    def __matmul__(self, other):
        return matmul(self, as_tensor(other))

    def __neg__(self):
        return mul(self, as_tensor(-1.0))


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(kind, out_data, parents, backward_fn) -> Tensor:
    """Create an op output, recording the edge only when grads are live."""
    out = Tensor(out_data)
    out._kind = kind
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _sum_to_shape(g, shape):
    """Undo numpy broadcasting: reduce gradient g back to `shape`."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(kind, a, b):
    try:
        return np.broadcast_shapes(a.data.shape, b.data.shape)
    except ValueError:
        raise ValueError(
            f"{kind}: incompatible shapes {a.data.shape} and {b.data.shape}"
        ) from None


# ---------------------------------------------------------------------------
# elementwise and linear-algebra ops


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    out_data = a.data + b.data

    def bwd(out):
        g = out.grad
        if a.requires_grad:
            a._accumulate(_sum_to_shape(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_sum_to_shape(g, b.data.shape))

    return _node("add", out_data, (a, b), bwd)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)
    out_data = a.data - b.data

    def bwd(out):
        g = out.grad
        if a.requires_grad:
            a._accumulate(_sum_to_shape(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_sum_to_shape(-g, b.data.shape))

    return _node("sub", out_data, (a, b), bwd)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)
    out_data = a.data * b.data

    def bwd(out):
        g = out.grad
        if a.requires_grad:
            a._accumulate(_sum_to_shape(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_sum_to_shape(g * a.data, b.data.shape))

    return _node("mul", out_data, (a, b), bwd)


def matmul(a, b):
    """Matrix product: (m,k)@(k,n), or (B,m,k)@(k,n) applied per batch row."""
    a, b = as_tensor(a), as_tensor(b)
    if b.data.ndim != 2:
        raise ValueError(f"matmul: right operand must be 2-d, got shapes {a.data.shape} and {b.data.shape}")
    if a.data.ndim not in (2, 3) or a.data.shape[-1] != b.data.shape[0]:
        raise ValueError(f"matmul: cannot multiply shapes {a.data.shape} and {b.data.shape}")
    k = b.data.shape[0]
    a2 = a.data.reshape(-1, k)
    out_data = (a2 @ b.data).reshape(a.data.shape[:-1] + (b.data.shape[1],))

    def bwd(out):
        g2 = out.grad.reshape(-1, b.data.shape[1])
        if a.requires_grad:
            a._accumulate((g2 @ b.data.T).reshape(a.data.shape))
        if b.requires_grad:
            b._accumulate(a2.T @ g2)

    return _node("matmul", out_data, (a, b), bwd)


def relu(x):
    x = as_tensor(x)
    out_data = np.maximum(x.data, 0.0)

    def bwd(out):
        if x.requires_grad:
            x._accumulate(out.grad * (x.data > 0.0))

    return _node("relu", out_data, (x,), bwd)


def tanh(x):
    x = as_tensor(x)
    out_data = np.tanh(x.data)

    def bwd(out):
        if x.requires_grad:
            x._accumulate(out.grad * (1.0 - out_data * out_data))

    return _node("tanh", out_data, (x,), bwd)


def square(x):
    x = as_tensor(x)

    def bwd(out):
        if x.requires_grad:
            x._accumulate(out.grad * 2.0 * x.data)

    return _node("square", x.data * x.data, (x,), bwd)


def sqrt(x):
    x = as_tensor(x)
    out_data = np.sqrt(x.data)

    def bwd(out):
        if x.requires_grad:
            x._accumulate(out.grad * 0.5 / out_data)

    return _node("sqrt", out_data, (x,), bwd)


def exp(x):
    x = as_tensor(x)
    out_data = np.exp(x.data)

    def bwd(out):
        if x.requires_grad:
            x._accumulate(out.grad * out_data)

    return _node("exp", out_data, (x,), bwd)


def softmax(x, axis=-1):
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def bwd(out):
        if x.requires_grad:
            g = out.grad
            inner = (g * out_data).sum(axis=axis, keepdims=True)
            x._accumulate(out_data * (g - inner))

    return _node("softmax", out_data, (x,), bwd)


# ---------------------------------------------------------------------------
# reductions and shape ops


def max_along(x, axis):
    """Max over one axis; gradient routes to the first (lowest-index) argmax."""
    x = as_tensor(x)
    out_data = x.data.max(axis=axis)
    idx = np.expand_dims(x.data.argmax(axis=axis), axis)

    def bwd(out):
        if x.requires_grad:
            g = np.zeros_like(x.data)
            np.put_along_axis(g, idx, np.expand_dims(out.grad, axis), axis=axis)
            x._accumulate(g)

    return _node("max", out_data, (x,), bwd)


def sum_along(x, axis=None):
    x = as_tensor(x)
    out_data = x.data.sum(axis=axis)

    def bwd(out):
        if x.requires_grad:
            if axis is None:
                x._accumulate(np.full_like(x.data, out.grad))
            else:
                x._accumulate(np.broadcast_to(np.expand_dims(out.grad, axis), x.data.shape))

    return _node("sum", out_data, (x,), bwd)


def mean_along(x, axis):
    x = as_tensor(x)
    out_data = x.data.mean(axis=axis)
    n = x.data.shape[axis]

    def bwd(out):
        if x.requires_grad:
            x._accumulate(np.broadcast_to(np.expand_dims(out.grad, axis), x.data.shape) / n)

    return _node("mean", out_data, (x,), bwd)


def concat(parts, axis):
    parts = [as_tensor(p) for p in parts]
    out_data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bwd(out):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                sl = [slice(None)] * out.grad.ndim
                sl[axis] = slice(lo, hi)
                p._accumulate(out.grad[tuple(sl)])

    return _node("concat", out_data, tuple(parts), bwd)


def slice_along(x, axis, start, stop):
    x = as_tensor(x)
    sl = [slice(None)] * x.data.ndim
    sl[axis] = slice(start, stop)
    sl = tuple(sl)
    out_data = x.data[sl].copy()

    def bwd(out):
        if x.requires_grad:
            g = np.zeros_like(x.data)
            g[sl] = out.grad
            x._accumulate(g)

    return _node("slice", out_data, (x,), bwd)


def gather(x, indices, axis=0):
    """Select rows by integer index along `axis`; gradient scatter-adds back."""
    x = as_tensor(x)
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1:
        raise ValueError(f"gather: indices must be 1-d, got shape {idx.shape}")
    out_data = np.take(x.data, idx, axis=axis)

    def bwd(out):
        if x.requires_grad:
            g = np.zeros_like(x.data)
            if axis == 0:
                np.add.at(g, idx, out.grad)
            else:
                gm = np.moveaxis(g, axis, 0)
                np.add.at(gm, idx, np.moveaxis(out.grad, axis, 0))
            x._accumulate(g)

    return _node("gather", out_data, (x,), bwd)


def reshape(x, shape):
    x = as_tensor(x)
    out_data = x.data.reshape(shape)

    def bwd(out):
        if x.requires_grad:
            x._accumulate(out.grad.reshape(x.data.shape))

    return _node("reshape", out_data, (x,), bwd)


def broadcast_to(x, shape):
    x = as_tensor(x)
    try:
        out_data = np.broadcast_to(x.data, shape).copy()
    except ValueError:
        raise ValueError(f"broadcast: cannot broadcast {x.data.shape} to {tuple(shape)}") from None

    def bwd(out):
        if x.requires_grad:
            x._accumulate(_sum_to_shape(out.grad, x.data.shape))

    return _node("broadcast", out_data, (x,), bwd)


# ---------------------------------------------------------------------------
# gradient-routing ops


def stop_gradient(x):
    """Identity in the forward pass; blocks all gradient flow in the backward."""
    x = as_tensor(x)
    out = Tensor(x.data.copy())
    out._kind = "stop_gradient"
    return out


def straight_through(value, route):
    """Forward equals `value` exactly; the backward pass treats the op as the
    identity on `route` (and contributes nothing to `value`).

    Equivalent to route + stop_gradient(value - route), but exact in floating
    point on the forward side.
    """
    value, route = as_tensor(value), as_tensor(route)
    if value.data.shape != route.data.shape:
        raise ValueError(
            f"straight_through: incompatible shapes {value.data.shape} and {route.data.shape}"
        )

    def bwd(out):
        if route.requires_grad:
            route._accumulate(out.grad)

    return _node("straight_through", value.data.copy(), (route,), bwd)


# ---------------------------------------------------------------------------
# graph traversal

OPS = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "matmul": matmul,
    "relu": relu,
    "tanh": tanh,
    "max": max_along,
    "mean": mean_along,
    "sum": sum_along,
    "concat": concat,
    "slice": slice_along,
    "gather": gather,
    "reshape": reshape,
    "broadcast": broadcast_to,
    "square": square,
    "sqrt": sqrt,
    "exp": exp,
    "softmax": softmax,
    "stop_gradient": stop_gradient,
    "straight_through": straight_through,
}


def forward_op(kind, *args, **kwargs):
    """Dispatch an op by name; unknown kinds are an error."""
    if kind not in OPS:
        raise ValueError(f"unknown op kind: {kind!r}")
    return OPS[kind](*args, **kwargs)


def topo_order(root: Tensor):
    """Operations reachable from `root`, inputs always before their outputs."""
    order, visited, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            stack.append((p, False))
    return order


def backward(loss: Tensor):
    """Accumulate d(loss)/d(tensor) into .grad for every tensor feeding `loss`."""
    if loss.data.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    order = topo_order(loss)
    loss._accumulate(np.ones_like(loss.data))
    for node in reversed(order):
        if node._backward is not None:
            node._backward(node)
