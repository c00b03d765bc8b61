"""Small reverse-mode autodiff over numpy arrays.

Only the operators needed by the parsing network, the affinity head and the
graph discriminator are provided. Every node keeps its forward value and a
closure that pushes the upstream gradient to its parents.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class Var:
    __slots__ = ("value", "grad", "parents", "backward_fn", "requires_grad", "name")

    def __init__(self, value, parents=(), backward_fn=None, requires_grad=False, name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(shape={self.value.shape}, name={self.name!r})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def param(value, name=None) -> Var:
    """Leaf that collects gradients."""
    return Var(value, requires_grad=True, name=name)


def const(value) -> Var:
    return value if isinstance(value, Var) else Var(value)


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _node(value, parents, backward_fn):
    out = Var(value, parents)
    if out.requires_grad:
        out.backward_fn = backward_fn
    else:
        out.parents = ()
    return out


def add(a, b) -> Var:
    a, b = const(a), const(b)
    sa, sb = a.shape, b.shape
    return _node(a.value + b.value, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Var:
    a, b = const(a), const(b)
    sa, sb = a.shape, b.shape
    return _node(a.value - b.value, (a, b),
                 lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Var:
    a, b = const(a), const(b)
    av, bv = a.value, b.value
    return _node(av * bv, (a, b),
                 lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))


def scale(a, c: float) -> Var:
    a = const(a)
    return _node(a.value * c, (a,), lambda g: (g * c,))


def matmul(a, b) -> Var:
    a, b = const(a), const(b)
    av, bv = a.value, b.value

    def back(g):
        if av.ndim == 1 and bv.ndim == 1:
            ga, gb = g * bv, g * av
        elif av.ndim == 1:
            ga = g @ bv.T
            gb = np.outer(av, g)
        elif bv.ndim == 1:
            ga = np.outer(g, bv)
            gb = av.T @ g
        else:
            ga = g @ bv.T
            gb = av.T @ g
        return ga, gb

    return _node(av @ bv, (a, b), back)


def exp(a) -> Var:
    a = const(a)
    out = np.exp(a.value)
    return _node(out, (a,), lambda g: (g * out,))


def log(a, floor: float = 0.0) -> Var:
    """Natural log; values below ``floor`` are clamped and get zero gradient."""
    a = const(a)
    x = a.value
    if floor > 0.0:
        mask = x >= floor
        xc = np.where(mask, x, floor)
        return _node(np.log(xc), (a,), lambda g: (np.where(mask, g / xc, 0.0),))
    return _node(np.log(x), (a,), lambda g: (g / x,))


def power(a, k: float) -> Var:
    a = const(a)
    x = a.value
    return _node(x ** k, (a,), lambda g: (g * k * x ** (k - 1.0),))


def clip(a, lo: float, hi: float) -> Var:
    """Clamp to ``[lo, hi]``; clamped entries pass no gradient."""
    a = const(a)
    x = a.value
    mask = (x >= lo) & (x <= hi)
    return _node(np.clip(x, lo, hi), (a,), lambda g: (g * mask,))


def tanh(a) -> Var:
    a = const(a)
    out = np.tanh(a.value)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a) -> Var:
    a = const(a)
    mask = a.value > 0
    return _node(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,))


def sigmoid(a) -> Var:
    a = const(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.value))
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),))


def softmax(a, axis=-1) -> Var:
    a = const(a)
    z = a.value - a.value.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _node(out, (a,), back)


def log_softmax(a, axis=-1) -> Var:
    a = const(a)
    z = a.value - a.value.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def back(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return _node(out, (a,), back)


def total(a, axis=None) -> Var:
    a = const(a)
    shape = a.shape

    def back(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _node(a.value.sum(axis=axis), (a,), back)


def mean(a, axis=None) -> Var:
    a = const(a)
    n = a.value.size if axis is None else a.shape[axis]
    return scale(total(a, axis), 1.0 / n)


def reshape(a, shape) -> Var:
    a = const(a)
    old = a.shape
    return _node(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a) -> Var:
    a = const(a)
    return _node(a.value.T, (a,), lambda g: (g.T,))


def take_rows(a, index) -> Var:
    """Rows ``a[index]``; repeated indices accumulate in the backward pass."""
    a = const(a)
    index = np.asarray(index)
    shape = a.shape

    def back(g):
        ga = np.zeros(shape)
        np.add.at(ga, index, g)
        return (ga,)

    return _node(a.value[index], (a,), back)


def pick(a, index) -> Var:
    """Element-wise gather ``a[i, index[i]]`` from a 2-D array."""
    a = const(a)
    rows = np.arange(a.shape[0])
    index = np.asarray(index)
    shape = a.shape

    def back(g):
        ga = np.zeros(shape)
        ga[rows, index] = g
        return (ga,)

    return _node(a.value[rows, index], (a,), back)


def gaussian_kernel(x, theta: float) -> Var:
    """Pairwise ``exp(-|x_i - x_j|^2 / 2 theta^2)`` over the rows of ``x``."""
    x = const(x)
    xv = x.value
    sq = (xv * xv).sum(axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * xv @ xv.T, 0.0)
    d2 = 0.5 * (d2 + d2.T)
    np.fill_diagonal(d2, 0.0)
    out = np.exp(-d2 / (2.0 * theta * theta))

    def back(g):
        m = g * out * (-1.0 / (2.0 * theta * theta))
        m = m + m.T
        return (2.0 * (m.sum(axis=1)[:, None] * xv - m @ xv),)

    return _node(out, (x,), back)


def conv2d(x, w, b, stride: int = 1, pad: int = 0) -> Var:
    """Single-image convolution, ``x`` is H x W x Cin and ``w`` is k x k x Cin x Cout."""
    x, w, b = const(x), const(w), const(b)
    xv, wv = x.value, w.value
    k, _, cin, cout = wv.shape
    xp = np.pad(xv, ((pad, pad), (pad, pad), (0, 0)))
    win = sliding_window_view(xp, (k, k), axis=(0, 1))[::stride, ::stride]
    ho, wo = win.shape[:2]
    # win: ho x wo x cin x k x k -> rows of (ky, kx, cin)
    cols = win.transpose(0, 1, 3, 4, 2).reshape(ho * wo, k * k * cin)
    wmat = wv.reshape(k * k * cin, cout)
    out = (cols @ wmat).reshape(ho, wo, cout) + b.value

    def back(g):
        g2 = g.reshape(ho * wo, cout)
        gw = (cols.T @ g2).reshape(wv.shape)
        gb = g2.sum(axis=0)
        gcols = (g2 @ wmat.T).reshape(ho, wo, k, k, cin)
        gxp = np.zeros(xp.shape)
        span_y = stride * (ho - 1) + 1
        span_x = stride * (wo - 1) + 1
        for dy in range(k):
            for dx in range(k):
                gxp[dy:dy + span_y:stride, dx:dx + span_x:stride] += gcols[:, :, dy, dx]
        gx = gxp[pad:pad + xv.shape[0], pad:pad + xv.shape[1]]
        return gx, gw, _unbroadcast(gb, b.shape)

    return _node(out, (x, w, b), back)


def backward(root: Var) -> None:
    """Accumulate d(root)/d(leaf) into ``leaf.grad`` for every leaf requiring grad."""
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads = {id(root): np.ones_like(root.value)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.backward_fn is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for p, pg in zip(node.parents, node.backward_fn(g)):
            if not p.requires_grad:
                continue
            key = id(p)
            grads[key] = pg if key not in grads else grads[key] + pg


def grads_of(root: Var, leaves: dict) -> dict:
    """Run backward from ``root`` and collect gradients for a name -> leaf mapping."""
    for v in leaves.values():
        v.grad = None
    backward(root)
    return {k: (v.grad if v.grad is not None else np.zeros_like(v.value)) for k, v in leaves.items()}
