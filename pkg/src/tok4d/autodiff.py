"""Reverse-mode automatic differentiation over numpy arrays.

A deliberately small tape: every ``Tensor`` wraps a float64 ndarray and
remembers how to push a cotangent back to its parents.  The graph is built
eagerly by the overloaded operators and freed when the last reference to
the output drops.  Reductions accumulate in graph-construction order, so
gradients are bit-reproducible run to run.

Every numeric path in the package that needs derivatives (transformer,
losses, probe network, quantizer surrogate, splat renderer hook) runs on
these ops in double precision; :func:`grad_check` is the finite-difference
harness used throughout the test suite.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import NonFiniteGradient

Array = np.ndarray


def _unbroadcast(grad: Array, shape: tuple) -> Array:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A node in the reverse-mode graph.

    `data` is always a float64 ndarray (scalars become 0-d arrays).  Leaf
    tensors created with ``requires_grad=True`` receive their gradient in
    ``.grad`` after ``backward()`` on a scalar output.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False,
                 parents: tuple = (), vjp: Callable | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Array | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = parents if self.requires_grad else ()
        self._vjp = vjp if self.requires_grad else None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad})"

    # -- graph traversal -------------------------------------------------

    def backward(self) -> None:
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._vjp is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, node._vjp(node.grad)):
                if g is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = g.copy() if g is node.grad else g
                else:
                    parent.grad = parent.grad + g

    # -- operators ---------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        return mul(self, power(other, -1.0))

    def __rtruediv__(self, other):
        return mul(as_tensor(other), power(self, -1.0))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __getitem__(self, idx):
        src = self

        def vjp(g):
            out = np.zeros_like(src.data)
            np.add.at(out, idx, g)
            return (out,)

        return Tensor(self.data[idx], parents=(self,), vjp=vjp)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        src_shape = self.data.shape
        return Tensor(self.data.reshape(shape), parents=(self,),
                      vjp=lambda g: (g.reshape(src_shape),))

    def transpose(self, *axes):
        if not axes:
            axes = tuple(reversed(range(self.data.ndim)))
        elif len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inv = np.argsort(axes)
        return Tensor(self.data.transpose(axes), parents=(self,),
                      vjp=lambda g: (g.transpose(inv),))

    @property
    def T(self):
        return self.transpose()

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def constant(value) -> Tensor:
    """A tensor explicitly outside the gradient graph."""
    return Tensor(np.asarray(value, dtype=np.float64))


def stop_gradient(t: Tensor) -> Tensor:
    return Tensor(t.data)


# -- primitive ops ---------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor(a.data + b.data, parents=(a, b),
                  vjp=lambda g: (_unbroadcast(g, a.data.shape),
                                 _unbroadcast(g, b.data.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor(a.data * b.data, parents=(a, b),
                  vjp=lambda g: (_unbroadcast(g * b.data, a.data.shape),
                                 _unbroadcast(g * a.data, b.data.shape)))


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    e = float(exponent)
    return Tensor(a.data ** e, parents=(a,),
                  vjp=lambda g: (g * e * a.data ** (e - 1.0),))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def vjp(g):
        ga = gb = None
        if a.data.ndim == 1 and b.data.ndim == 1:
            return (g * b.data, g * a.data)
        if a.requires_grad:
            if a.data.ndim == 1:
                ga = np.matmul(g[..., None, :], np.swapaxes(b.data, -1, -2))[..., 0, :]
            elif b.data.ndim == 1:
                ga = np.matmul(g[..., :, None], b.data[None, :])
            else:
                ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            ga = _unbroadcast(ga, a.data.shape)
        if b.requires_grad:
            if a.data.ndim == 1:
                gb = np.matmul(a.data[:, None], g[..., None, :])
            elif b.data.ndim == 1:
                gb = np.matmul(np.swapaxes(a.data, -1, -2), g[..., :, None])[..., 0]
            else:
                gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            gb = _unbroadcast(gb, b.data.shape)
        return (ga, gb)

    return Tensor(np.matmul(a.data, b.data), parents=(a, b), vjp=vjp)


def _restore_axes(g: Array, shape: tuple, axis, keepdims: bool) -> Array:
    if keepdims or axis is None:
        return np.broadcast_to(g, shape)
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    axes = tuple(a % len(shape) for a in axes)
    g = np.expand_dims(g, axes)
    return np.broadcast_to(g, shape)


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    return Tensor(a.data.sum(axis=axis, keepdims=keepdims), parents=(a,),
                  vjp=lambda g: (_restore_axes(g, a.data.shape, axis, keepdims),))


def tmean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    scale = out.size / a.data.size
    return Tensor(out, parents=(a,),
                  vjp=lambda g: (_restore_axes(g * scale, a.data.shape, axis, keepdims),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return Tensor(out, parents=(a,), vjp=lambda g: (g * (1.0 - out * out),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = sigmoid_np(a.data)
    return Tensor(out, parents=(a,), vjp=lambda g: (g * out * (1.0 - out),))


def sigmoid_np(x: Array) -> Array:
    """Numerically stable logistic function on raw arrays."""
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus_np(x: Array) -> Array:
    return np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0.0)


def softplus(a) -> Tensor:
    a = as_tensor(a)
    return Tensor(softplus_np(a.data), parents=(a,),
                  vjp=lambda g: (g * sigmoid_np(a.data),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return Tensor(out, parents=(a,), vjp=lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return Tensor(np.log(a.data), parents=(a,), vjp=lambda g: (g / a.data,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return Tensor(out, parents=(a,), vjp=lambda g: (g * 0.5 / out,))


def absolute(a) -> Tensor:
    a = as_tensor(a)
    return Tensor(np.abs(a.data), parents=(a,),
                  vjp=lambda g: (g * np.sign(a.data),))


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - inner),)

    return Tensor(out, parents=(a,), vjp=vjp)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def vjp(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return Tensor(out, parents=(a,), vjp=vjp)


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    sizes = [p.data.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor(np.concatenate([p.data for p in parts], axis=axis),
                  parents=tuple(parts), vjp=vjp)


def stack(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]

    def vjp(g):
        return tuple(np.moveaxis(g, axis, 0)[i] for i in range(len(parts)))

    return Tensor(np.stack([p.data for p in parts], axis=axis),
                  parents=tuple(parts), vjp=vjp)


def take_flat(a, idx: Array, out_shape: tuple | None = None) -> Tensor:
    """Gather from the flattened input; the backward pass scatter-adds.

    `idx` is an int64 array of flat indices.  This is the workhorse behind
    im2col convolutions and patch scatter/gather, so the backward pass uses
    bincount (deterministic, index-ordered accumulation).
    """
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.int64)
    out = a.data.reshape(-1)[idx]
    if out_shape is not None:
        out = out.reshape(out_shape)

    def vjp(g):
        flat = np.bincount(idx.reshape(-1), weights=g.reshape(-1),
                           minlength=a.data.size)
        return (flat.reshape(a.data.shape),)

    return Tensor(out, parents=(a,), vjp=vjp)


def custom(out_data: Array, parents: Sequence[Tensor], vjp: Callable) -> Tensor:
    """Hook an externally computed forward/backward pair into the graph."""
    return Tensor(out_data, parents=tuple(parents), vjp=vjp)


def gelu(a) -> Tensor:
    """Gaussian error linear unit, tanh form (smooth everywhere)."""
    a = as_tensor(a)
    c = np.sqrt(2.0 / np.pi)
    x = a.data
    inner = c * (x + 0.044715 * x ** 3)
    th = np.tanh(inner)
    out = 0.5 * x * (1.0 + th)

    def vjp(g):
        sech2 = 1.0 - th * th
        local = 0.5 * (1.0 + th) + 0.5 * x * sech2 * c * (1.0 + 3 * 0.044715 * x * x)
        return (g * local,)

    return Tensor(out, parents=(a,), vjp=vjp)


def layer_norm(x, gain, bias, eps: float = 1e-6) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    normed = centered * inv
    out = normed * gain.data + bias.data

    def vjp(g):
        gx = gg = gb = None
        if x.requires_grad:
            dn = g * gain.data
            gx = inv * (dn - dn.mean(axis=-1, keepdims=True)
                        - normed * (dn * normed).mean(axis=-1, keepdims=True))
        if gain.requires_grad:
            gg = _unbroadcast(g * normed, gain.data.shape)
        if bias.requires_grad:
            gb = _unbroadcast(g, bias.data.shape)
        return (gx, gg, gb)

    return Tensor(out, parents=(x, gain, bias), vjp=vjp)


# -- verification harness --------------------------------------------------

def grad_check(f: Callable[[Tensor], Tensor], point: Array,
               eps: float = 1e-4) -> float:
    """Max relative error between reverse-mode and central-difference grads.

    `f` maps a leaf tensor to a scalar tensor.  Central differences use a
    2*eps step per coordinate; the relative error at coordinate i is
    |g_ad[i] - g_fd[i]| / max(1, |g_fd[i]|).
    """
    point = np.array(point, dtype=np.float64)  # private copy; perturbed in place
    leaf = Tensor(point.copy(), requires_grad=True)
    out = f(leaf)
    out.backward()
    if leaf.grad is None:
        g_ad = np.zeros_like(point)
    else:
        g_ad = leaf.grad.reshape(point.shape)
    if not np.all(np.isfinite(g_ad)):
        raise NonFiniteGradient("reverse-mode gradient contains NaN/inf")

    g_fd = np.zeros_like(point)
    flat = point.reshape(-1)
    fd_flat = g_fd.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = float(f(Tensor(point)).data)
        flat[i] = orig - eps
        lo = float(f(Tensor(point)).data)
        flat[i] = orig
        fd_flat[i] = (hi - lo) / (2.0 * eps)

    err = np.abs(g_ad - g_fd) / np.maximum(1.0, np.abs(g_fd))
    return float(err.max()) if err.size else 0.0
