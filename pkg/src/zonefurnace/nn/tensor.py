"""Reverse-mode automatic differentiation over numpy arrays.

Every operation returns a new ``Tensor`` holding its value, its parents and a
closure that pushes the output gradient back to them. ``backward`` walks the
graph in reverse topological order. Constants are plain numpy arrays or
Tensors created with ``requires_grad=False``.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

_SQRT2 = np.sqrt(2.0)
_SQRT2PI = np.sqrt(2.0 * np.pi)


class GraphError(RuntimeError):
    pass


class Tensor:
    __slots__ = ("value", "grad", "parents", "backward_fn", "requires_grad", "op")

    def __init__(self, value, requires_grad=False, parents=(), backward_fn=None, op="leaf"):
        self.value = np.asarray(value, dtype=float)
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad
        self.op = op

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.value.shape})"

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad = None

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(value, parents, backward_fn, op):
    req = any(p.requires_grad for p in parents)
    return Tensor(value, req, parents if req else (), backward_fn if req else None, op)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(a.value + b.value, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return _node(a.value - b.value, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)

    return _node(a.value * b.value, (a, b), bw, "mul")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return g @ b.value.T, a.value.T @ g

    return _node(a.value @ b.value, (a, b), bw, "matmul")


def einsum_const(subscripts: str, x, C) -> Tensor:
    """einsum of a tensor ``x`` with a constant array ``C`` (e.g. ``"bjn,ijn->bi"``)."""
    x = as_tensor(x)
    C = np.asarray(C, dtype=float)
    ins, out = subscripts.split("->")
    xs, cs = ins.split(",")

    def bw(g):
        return (np.einsum(f"{out},{cs}->{xs}", g, C, optimize=True),)

    return _node(np.einsum(subscripts, x.value, C, optimize=True), (x,), bw, "einsum")


def pow4(x) -> Tensor:
    x = as_tensor(x)
    v = x.value

    def bw(g):
        return (4.0 * g * v**3,)

    return _node(v**4, (x,), bw, "pow4")


def poly(x, b) -> Tensor:
    """Per-gas polynomials: out[..., n] = sum_i b[i, n] * x**i, evaluated by Horner's rule."""
    x = as_tensor(x)
    b = np.asarray(b, dtype=float)
    v = x.value[..., None]
    out = np.zeros(x.shape + (b.shape[1],))
    for row in b[::-1]:
        out = out * v + row
    d = np.zeros_like(out)
    for i in range(b.shape[0] - 1, 0, -1):
        d = d * v + i * b[i]

    def bw(g):
        return ((g * d).sum(axis=-1),)

    return _node(out, (x,), bw, "poly")


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)

    def bw(g):
        return (g.reshape(x.shape),)

    return _node(x.value.reshape(shape), (x,), bw, "reshape")


def take(x, idx) -> Tensor:
    x = as_tensor(x)

    def bw(g):
        full = np.zeros_like(x.value)
        np.add.at(full, idx, g)
        return (full,)

    return _node(x.value[idx], (x,), bw, "take")


def concat(parts, axis=-1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    sizes = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def bw(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _node(np.concatenate([p.value for p in parts], axis=axis), tuple(parts), bw, "concat")


def sum_(x, axis=None) -> Tensor:
    x = as_tensor(x)

    def bw(g):
        gg = g if axis is None else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, x.shape).copy(),)

    return _node(x.value.sum(axis=axis), (x,), bw, "sum")


def mean(x, axis=None) -> Tensor:
    x = as_tensor(x)
    n = x.value.size if axis is None else x.shape[axis]
    return mul(sum_(x, axis), 1.0 / n)


def sum_sq(x, axis=None) -> Tensor:
    x = as_tensor(x)

    def bw(g):
        gg = g if axis is None else np.expand_dims(g, axis)
        return (2.0 * gg * x.value,)

    return _node((x.value**2).sum(axis=axis), (x,), bw, "sum_sq")


def detach(x) -> Tensor:
    x = as_tensor(x)
    return Tensor(x.value.copy(), False, (), None, "detach")


def maxdiv(x, axis=-1, delta=1e-12, ref=None) -> Tensor:
    """Divide by a gradient-free per-row scale.

    The scale is ``max(x)`` along ``axis`` (or ``ref`` when given); rows whose
    scale is at most ``delta`` are left unscaled.
    """
    x = as_tensor(x)
    scale = np.max(x.value, axis=axis, keepdims=True) if ref is None else np.asarray(ref, dtype=float)
    scale = np.where(scale > delta, scale, 1.0)
    return mul(x, 1.0 / scale)


# activations

def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.value > 0

    def bw(g):
        return (g * mask,)

    return _node(np.where(mask, x.value, 0.0), (x,), bw, "relu")


def gelu(x) -> Tensor:
    x = as_tensor(x)
    v = x.value
    cdf = 0.5 * (1.0 + erf(v / _SQRT2))
    pdf = np.exp(-0.5 * v * v) / _SQRT2PI

    def bw(g):
        return (g * (cdf + v * pdf),)

    return _node(v * cdf, (x,), bw, "gelu")


def _sigmoid(v):
    return 0.5 * (1.0 + np.tanh(0.5 * v))


def silu(x) -> Tensor:
    x = as_tensor(x)
    v = x.value
    s = _sigmoid(v)

    def bw(g):
        return (g * (s + v * s * (1.0 - s)),)

    return _node(v * s, (x,), bw, "silu")


def hardswish(x) -> Tensor:
    x = as_tensor(x)
    v = x.value
    r = np.clip(v + 3.0, 0.0, 6.0) / 6.0
    dr = np.where((v > -3.0) & (v < 3.0), 1.0 / 6.0, 0.0)

    def bw(g):
        return (g * (r + v * dr),)

    return _node(v * r, (x,), bw, "hardswish")


def mish(x) -> Tensor:
    x = as_tensor(x)
    v = x.value
    sp = np.logaddexp(0.0, v)
    t = np.tanh(sp)

    def bw(g):
        return (g * (t + v * (1.0 - t * t) * _sigmoid(v)),)

    return _node(v * t, (x,), bw, "mish")


ACTIVATIONS = {"relu": relu, "gelu": gelu, "silu": silu, "hardswish": hardswish, "mish": mish}


def _topo(root: Tensor) -> list:
    order, state = [], {}
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            state[id(node)] = 2
            order.append(node)
            continue
        s = state.get(id(node), 0)
        if s == 2:
            continue
        if s == 1:
            raise GraphError("cycle in the computation graph")
        state[id(node)] = 1
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and state.get(id(p), 0) != 2:
                if state.get(id(p), 0) == 1:
                    raise GraphError("cycle in the computation graph")
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d loss / d leaf into ``.grad`` of every leaf that requires it."""
    if loss.value.size != 1:
        raise GraphError("backward needs a scalar loss")
    if not loss.requires_grad:
        return
    grads = {id(loss): np.ones_like(loss.value)}
    for node in reversed(_topo(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.backward_fn is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for p, gp in zip(node.parents, node.backward_fn(g)):
            if not p.requires_grad:
                continue
            k = id(p)
            grads[k] = gp if k not in grads else grads[k] + gp
