"""Dense float64 tensors with a reverse-mode differentiation tape.

Every op records a closure that maps the output gradient to one gradient per
parent. :func:`backward` walks the recorded DAG once in reverse topological
order and accumulates into :attr:`Param.grad`.

Layout conventions used by the graph ops: feature maps are ``[..., C, T, N]``
(channels, frames, joints) and adjacency stacks are ``[..., C, N, N]``; any
number of leading axes (batch, entity) is allowed.
"""
from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

DTYPE = np.float64

_grad_enabled = True


class ShapeError(ValueError):
    """Raised when operand extents are inconsistent."""


@contextmanager
def no_grad():
    """Disable tape recording inside the block."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "parents", "backward_fn", "requires_grad", "op")

    def __init__(self, data, parents: Sequence["Tensor"] = (), backward_fn=None, op: str = ""):
        self.data = np.asarray(data, dtype=DTYPE)
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.requires_grad = bool(self.parents) and backward_fn is not None
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op or 'leaf'})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, power(other, -1.0))
        return scale(self, 1.0 / other)

    def __pow__(self, p: float):
        return power(self, p)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def backward(self):
        backward(self)


class Param(Tensor):
    """Learnable leaf. ``decay`` marks membership in the weight-decay set."""

    __slots__ = ("grad", "name", "decay")

    def __init__(self, data, name: str = "", decay: bool = True):
        super().__init__(np.array(data, dtype=DTYPE, copy=True))
        self.requires_grad = True
        self.grad = np.zeros_like(self.data)
        self.name = name
        self.decay = decay

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Param({self.name!r}, shape={self.shape})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward_fn, op) -> Tensor:
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(data, parents, backward_fn, op)
    return Tensor(data, op=op)


# ---------------------------------------------------------------- backward

def _topo_order(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(param) into every reachable :class:`Param`."""
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if isinstance(node, Param):
            node.grad += g
            continue
        if node.backward_fn is None:
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


def finite_diff_grad(f: Callable[[np.ndarray], float], x, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x``."""
    if h <= 0:
        raise ValueError("step h must be positive")
    x = np.array(x, dtype=DTYPE, copy=True)
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x))
        flat[i] = orig - h
        fm = float(f(x))
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data

    def bw(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _make(ad * bd, (a, b), bw, "mul")


def scale(x, s: float) -> Tensor:
    """Multiply by a Python constant."""
    x, s = as_tensor(x), float(s)
    return _make(x.data * s, (x,), lambda g: (g * s,), "scale")


def power(x: Tensor, p: float) -> Tensor:
    xd = x.data
    out = xd ** p
    return _make(out, (x,), lambda g: (g * p * xd ** (p - 1.0),), "pow")


def tanh_map(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _make(out, (x,), lambda g: (g * (1.0 - out * out),), "tanh")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def absolute(x: Tensor) -> Tensor:
    sign = np.sign(x.data)
    return _make(np.abs(x.data), (x,), lambda g: (g * sign,), "abs")


# ---------------------------------------------------------------- reductions / shape

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    shape = x.shape
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(out, (x,), bw, "sum")


def tmean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    return scale(tsum(x, axes, keepdims), 1.0 / count)


def mean_over_time(x: Tensor) -> Tensor:
    """``[..., C, T, N] -> [..., C, N]`` average over frames."""
    if x.ndim < 3:
        raise ShapeError(f"mean_over_time expects [..., C, T, N], got {x.shape}")
    return tmean(x, axis=-2)


def global_mean(x: Tensor) -> Tensor:
    """``[..., C, T, N] -> [..., C]`` average over frames and joints."""
    return tmean(x, axis=(-2, -1))


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def getitem(x: Tensor, index) -> Tensor:
    shape = x.shape

    fancy = any(isinstance(i, (list, np.ndarray)) for i in (index if isinstance(index, tuple) else (index,)))

    def bw(g):
        full = np.zeros(shape, dtype=DTYPE)
        if fancy:
            np.add.at(full, index, g)
        else:
            full[index] += g
        return (full,)

    return _make(x.data[index], (x,), bw, "getitem")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ndim = tensors[0].ndim
    ax = axis % ndim
    for t in tensors[1:]:
        if t.ndim != ndim or any(t.shape[i] != tensors[0].shape[i] for i in range(ndim) if i != ax):
            raise ShapeError(f"concat: shapes {tensors[0].shape} and {t.shape} differ off axis {axis}")
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _make(np.concatenate([t.data for t in tensors], axis=ax), tensors, bw, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    expanded = []
    for t in tensors:
        shape = list(t.shape)
        ax = axis % (t.ndim + 1)
        shape.insert(ax, 1)
        expanded.append(reshape(t, tuple(shape)))
    return concat(expanded, axis)


# ---------------------------------------------------------------- graph ops

def contract_graph(F: Tensor, A: Tensor) -> Tensor:
    """Channel-wise graph aggregation ``out[..., c, t, e] = sum_d F[..., c, t, d] A[..., c, d, e]``."""
    f, a = F.data, A.data
    if f.ndim < 3 or a.ndim != f.ndim:
        raise ShapeError(f"contract_graph: rank mismatch F{f.shape} A{a.shape}")
    for axis in range(f.ndim - 2):
        if f.shape[axis] != a.shape[axis]:
            raise ShapeError(
                f"contract_graph: axis {axis} differs (F has {f.shape[axis]}, A has {a.shape[axis]})")
    n = f.shape[-1]
    if a.shape[-2] != n or a.shape[-1] != n:
        raise ShapeError(f"contract_graph: adjacency joint axes {a.shape[-2:]} do not match N={n}")
    out = np.matmul(f, a)

    def bw(g):
        return np.matmul(g, np.swapaxes(a, -1, -2)), np.matmul(np.swapaxes(f, -1, -2), g)

    return _make(out, (F, A), bw, "contract_graph")


def pointwise_conv(X: Tensor, W: Tensor, b: Tensor | None = None) -> Tensor:
    """1x1 convolution on the channel axis of ``[..., C_in, H, W]``."""
    x, w = X.data, W.data
    if x.ndim < 3 or w.ndim != 2 or x.shape[-3] != w.shape[1]:
        raise ShapeError(f"pointwise_conv: input {x.shape} incompatible with weights {w.shape}")
    if b is not None and b.shape != (w.shape[0],):
        raise ShapeError(f"pointwise_conv: bias {b.shape} for {w.shape[0]} output channels")
    xf = _flat(x)
    out = np.matmul(w, xf)
    if b is not None:
        out += b.data[:, None]
    out = out.reshape(x.shape[:-3] + (w.shape[0],) + x.shape[-2:])

    def bw(g):
        gf = _flat(g)
        gx = np.matmul(w.T, gf).reshape(x.shape)
        gw = _sum_lead(np.matmul(gf, np.swapaxes(xf, -1, -2)))
        if b is None:
            return gx, gw
        return gx, gw, gf.reshape(-1, gf.shape[-2], gf.shape[-1]).sum(axis=(0, 2))

    parents = (X, W) if b is None else (X, W, b)
    return _make(out, parents, bw, "pointwise_conv")


def _flat(a: np.ndarray) -> np.ndarray:
    """Merge the last two axes (``[..., C, H, W] -> [..., C, H*W]``)."""
    return a.reshape(a.shape[:-2] + (a.shape[-2] * a.shape[-1],))


def _sum_lead(a: np.ndarray) -> np.ndarray:
    return a.reshape((-1,) + a.shape[-2:]).sum(axis=0)


def _time_taps(T: int, k: int, dilation: int, stride: int):
    pad = dilation * (k - 1) // 2
    span = dilation * (k - 1) + 1
    if span > T + 2 * pad:
        raise ShapeError(f"temporal_conv: kernel span {span} exceeds padded length {T + 2 * pad}")
    t_out = (T + 2 * pad - span) // stride + 1
    taps = [slice(j * dilation, j * dilation + stride * (t_out - 1) + 1, stride) for j in range(k)]
    return pad, t_out, taps


def temporal_conv(X: Tensor, branches: Sequence[tuple[Tensor, int, int]]) -> Tensor:
    """Sum of dilated frame-axis convolutions, one per ``(weights[C_out, C_in, k], dilation, stride)``.

    Each branch zero-pads ``dilation * (k - 1) // 2`` frames on both sides.
    """
    x = X.data
    if x.ndim < 3:
        raise ShapeError(f"temporal_conv expects [..., C, T, N], got {x.shape}")
    T, n = x.shape[-2], x.shape[-1]
    lead = x.shape[:-3]
    total, caches = None, []
    for W, dilation, stride in branches:
        w = W.data
        if w.ndim != 3 or w.shape[1] != x.shape[-3]:
            raise ShapeError(f"temporal_conv: input channels {x.shape[-3]} vs kernel {w.shape}")
        c_out, c_in, k = w.shape
        pad, t_out, taps = _time_taps(T, k, dilation, stride)
        xp = np.pad(x, [(0, 0)] * (x.ndim - 2) + [(pad, pad), (0, 0)])
        # im2col: [..., k, C_in, T', N] flattened to [..., k*C_in, T'*N]
        cols = np.stack([xp[..., sl, :] for sl in taps], axis=-4).reshape(lead + (k * c_in, t_out * n))
        wmat = w.transpose(0, 2, 1).reshape(c_out, k * c_in)
        out = np.matmul(wmat, cols).reshape(lead + (c_out, t_out, n))
        if total is not None and out.shape != total.shape:
            raise ShapeError(f"temporal_conv: branch outputs disagree {total.shape} vs {out.shape}")
        total = out if total is None else total + out
        caches.append((w.shape, wmat, cols, xp.shape, pad, taps))

    def bw(g):
        gx = np.zeros_like(x)
        gf = _flat(g)
        gws = []
        for (c_out, c_in, k), wmat, cols, xp_shape, pad, taps in caches:
            gw = _sum_lead(np.matmul(gf, np.swapaxes(cols, -1, -2)))
            gws.append(gw.reshape(c_out, k, c_in).transpose(0, 2, 1))
            gcols = np.matmul(wmat.T, gf).reshape(lead + (k, c_in) + g.shape[-2:])
            gxp = np.zeros(xp_shape, dtype=DTYPE)
            for j, sl in enumerate(taps):
                gxp[..., sl, :] += gcols[..., j, :, :, :]
            gx += gxp[..., pad:pad + T, :]
        return (gx, *gws)

    parents = (X, *[br[0] for br in branches])
    return _make(total, parents, bw, "temporal_conv")


def standardize(x: Tensor, axes: tuple[int, ...], eps: float = 1e-5) -> tuple[Tensor, np.ndarray, np.ndarray]:
    """Batch standardization over ``axes``; returns the output and the (biased) batch mean and variance."""
    xd = x.data
    mean = xd.mean(axis=axes, keepdims=True)
    centered = xd - mean
    var = (centered * centered).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv

    def bw(g):
        return (inv * (g - g.mean(axis=axes, keepdims=True) - xhat * (g * xhat).mean(axis=axes, keepdims=True)),)

    return _make(xhat, (x,), bw, "standardize"), mean, var


def pairwise_tanh(P: Tensor, Q: Tensor) -> Tensor:
    """Correlation map ``out[..., c, i, j] = tanh(P[..., c, i] - Q[..., c, j])``."""
    if P.shape[-1] != Q.shape[-1] or P.shape[-2] != Q.shape[-2]:
        raise ShapeError(f"pairwise_tanh: {P.shape} vs {Q.shape}")
    diff = sub(reshape(P, P.shape + (1,)), reshape(Q, Q.shape[:-1] + (1, Q.shape[-1])))
    return tanh_map(diff)


def channel_broadcast_add(V: Tensor, A: Tensor) -> Tensor:
    """``V[..., C, N, N]`` plus a single-channel ``A[1, N, N]`` repeated over every channel."""
    if A.ndim != 3 or A.shape[0] != 1 or V.shape[-2:] != A.shape[-2:]:
        raise ShapeError(f"channel_broadcast_add: {V.shape} vs {A.shape}")
    return add(V, A)


def linear(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    """``x[B, C] @ W[K, C].T + b[K]``."""
    if x.ndim != 2 or x.shape[1] != W.shape[1] or b.shape != (W.shape[0],):
        raise ShapeError(f"linear: input {x.shape}, weights {W.shape}, bias {b.shape}")
    xd, wd = x.data, W.data

    def bw(g):
        return g @ wd, g.T @ xd, g.sum(axis=0)

    return _make(xd @ wd.T + b.data, (x, W, b), bw, "linear")


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout. The sampled mask is kept in the closure for backward."""
    if not training or rate <= 0.0:
        return x
    keep = 1.0 - rate
    mask = (rng.random(x.shape) < keep) / keep
    return _make(x.data * mask, (x,), lambda g: (g * mask,), "dropout")


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(``logits[B, K]``)."""
    z = logits.data
    labels = np.asarray(labels, dtype=np.int64)
    if z.ndim != 2 or labels.shape != (z.shape[0],):
        raise ShapeError(f"softmax_cross_entropy: logits {z.shape}, labels {labels.shape}")
    shifted = z - z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logsum
    rows = np.arange(z.shape[0])
    loss = -logp[rows, labels].mean()

    def bw(g):
        p = np.exp(logp)
        p[rows, labels] -= 1.0
        return (g * p / z.shape[0],)

    return _make(np.asarray(loss), (logits,), bw, "softmax_cross_entropy")
