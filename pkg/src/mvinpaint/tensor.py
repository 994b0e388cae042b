"""Reverse-mode automatic differentiation on numpy arrays.

The tape is implicit: each differentiable op attaches a node to its output
holding the parent tensors and a closure that maps the output gradient to
parent gradients. ``Tensor.backward`` replays nodes in reverse creation
order, which is a valid topological order because an op's output is always
created after its inputs.

Arrays are float32 by default. Every op preserves the dtype of its inputs,
so the same graph can be evaluated in float64 by the gradient checker.
Gradient buffers are only ever rebound, never mutated in place; closures may
therefore return views (broadcasts, reshapes) without aliasing hazards.
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager

import numpy as np

from .errors import DimensionError, NumericError

_seq = itertools.count()
_grad_enabled = True

# Optional fast convolution backend for forward passes that skip the tape
# (inference, finite differences). The taped path keeps the im2col
# reference implementation, whose unfolded columns the backward pass needs.
_conv_backend = None


def _torch():
    global _conv_backend
    if _conv_backend is None:
        try:
            import torch
            _conv_backend = torch
        except ImportError:
            _conv_backend = False
    return _conv_backend or None


@contextmanager
def no_grad():
    """Disable tape recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class _Node:
    __slots__ = ("parents", "backward_fn")

    def __init__(self, parents, backward_fn):
        self.parents = parents
        self.backward_fn = backward_fn


class Tensor:
    """A numpy array plus an optional position on the autodiff tape."""

    __slots__ = ("data", "requires_grad", "grad", "node", "seq")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
        self.node = None
        self.seq = next(_seq)

    # -- introspection ------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    # -- graph --------------------------------------------------------

    def detach(self):
        """A tensor sharing this data but cut off from the tape."""
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    def backward(self, grad=None):
        """Accumulate gradients into every reachable leaf.

        Intermediate nodes are freed as they are consumed, so a graph can
        be walked once only. ``grad`` defaults to ones and must match this
        tensor's shape; calling without it requires a single-element tensor.
        """
        if grad is None:
            if self.data.size != 1:
                raise DimensionError(
                    f"backward() without a seed gradient needs a scalar, got shape {self.shape}"
                )
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.data.dtype)
            if grad.shape != self.data.shape:
                raise DimensionError(
                    f"seed gradient shape {grad.shape} does not match tensor shape {self.shape}"
                )

        order = []
        seen = {id(self)}
        stack = [self]
        while stack:
            t = stack.pop()
            order.append(t)
            if t.node is not None:
                for p in t.node.parents:
                    if id(p) not in seen and p.requires_grad:
                        seen.add(id(p))
                        stack.append(p)
        order.sort(key=lambda t: t.seq, reverse=True)

        self.grad = grad
        for t in order:
            node, g = t.node, t.grad
            if node is None or g is None:
                continue
            parent_grads = node.backward_fn(g)
            for p, pg in zip(node.parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                p.grad = pg if p.grad is None else p.grad + pg
            t.node = None
            t.grad = None  # intermediates do not keep gradients

    # -- operators ----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(_wrap(other, self.dtype), -1.0))

    def __rsub__(self, other):
        return add(_wrap(other, self.dtype), mul(self, -1.0))

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise DimensionError("tensor/tensor division is not an op; multiply by a reciprocal")
        return mul(self, 1.0 / np.asarray(other, dtype=self.dtype))

    def __matmul__(self, other):
        return matmul(self, other)

    def __abs__(self):
        return absolute(self)

    def __getitem__(self, key):
        _check_basic_key(key)
        x = self
        out = x.data[key]
        out = np.asarray(out)

        def bw(g):
            gx = np.zeros_like(x.data)
            gx[key] += g
            return (gx,)

        return _make(out, (x,), bw)

    # -- shape ops ----------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        x = self
        out = x.data.reshape(shape)

        def bw(g):
            return (g.reshape(x.data.shape),)

        return _make(out, (x,), bw)

    def transpose(self, *axes):
        x = self
        perm = axes if axes else tuple(reversed(range(x.data.ndim)))
        if len(perm) == 1 and isinstance(perm[0], (tuple, list)):
            perm = tuple(perm[0])
        inv = tuple(np.argsort(perm))
        out = np.transpose(x.data, perm)

        def bw(g):
            return (np.transpose(g, inv),)

        return _make(out, (x,), bw)

    # -- reductions ---------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        x = self
        out = x.data.sum(axis=axis, keepdims=keepdims)
        axes = _norm_axes(axis, x.data.ndim)

        def bw(g):
            gg = g if keepdims or axis is None else np.expand_dims(g, axes)
            return (np.broadcast_to(gg, x.data.shape),)

        return _make(np.asarray(out), (x,), bw)

    def mean(self, axis=None, keepdims=False):
        x = self
        out = x.data.mean(axis=axis, keepdims=keepdims)
        axes = _norm_axes(axis, x.data.ndim)
        count = x.data.size if axis is None else int(np.prod([x.data.shape[a] for a in axes]))

        def bw(g):
            gg = g if keepdims or axis is None else np.expand_dims(g, axes)
            return (np.broadcast_to(gg, x.data.shape) / count,)

        return _make(np.asarray(out), (x,), bw)


# ---------------------------------------------------------------------
# op plumbing


def _make(data, parents, backward_fn):
    rec = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=rec, dtype=data.dtype)
    if rec:
        out.node = _Node(tuple(parents), backward_fn)
    return out


def _wrap(x, dtype):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def _unbroadcast(g, shape):
    """Sum a gradient down to ``shape`` after numpy broadcasting."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    squash = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if squash:
        g = g.sum(axis=squash, keepdims=True)
    return g


def _check_basic_key(key):
    items = key if isinstance(key, tuple) else (key,)
    for it in items:
        if isinstance(it, (int, np.integer, slice)) or it is Ellipsis or it is None:
            continue
        raise DimensionError(
            "indexing supports ints, slices, Ellipsis and None only; use take_flat for arrays"
        )


# ---------------------------------------------------------------------
# elementwise


def add(a, b):
    a = _wrap(a, getattr(b, "dtype", np.float32))
    b = _wrap(b, a.dtype)
    out = a.data + b.data

    def bw(g):
        return (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape))

    return _make(out, (a, b), bw)


def mul(a, b):
    a = _wrap(a, getattr(b, "dtype", np.float32))
    b = _wrap(b, a.dtype)
    out = a.data * b.data

    def bw(g):
        return (_unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape))

    return _make(out, (a, b), bw)


def relu(x):
    out = np.maximum(x.data, 0)

    def bw(g):
        return (g * (x.data > 0),)

    return _make(out, (x,), bw)


def leaky_relu(x, alpha=0.2):
    out = np.where(x.data > 0, x.data, x.data * alpha)

    def bw(g):
        return (np.where(x.data > 0, g, g * alpha),)

    return _make(out, (x,), bw)


def sigmoid(x):
    """Numerically stable logistic; safe at large |x| in float32."""
    d = x.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    e = np.exp(d[~pos])
    out[~pos] = e / (1.0 + e)

    def bw(g):
        return (g * out * (1.0 - out),)

    return _make(out, (x,), bw)


def log(x):
    out = np.log(x.data)

    def bw(g):
        return (g / x.data,)

    return _make(out, (x,), bw)


def absolute(x):
    out = np.abs(x.data)

    def bw(g):
        return (g * np.sign(x.data),)

    return _make(out, (x,), bw)


def clip(x, lo, hi):
    """Clamp to [lo, hi]; gradient is zero wherever the clamp is active."""
    out = np.clip(x.data, lo, hi)
    inside = ((x.data > lo) & (x.data < hi)).astype(x.data.dtype)

    def bw(g):
        return (g * inside,)

    return _make(out, (x,), bw)


def rotate_pairs(x, cos, sin):
    """Rotate consecutive feature pairs of the last axis by per-pair angles.

    ``x`` is [..., d] with even d; ``cos``/``sin`` broadcast against the
    [..., d/2] pair view. One fused node instead of a slice/multiply/concat
    chain; the backward pass applies the inverse rotation to the gradient.
    """
    if x.data.shape[-1] % 2:
        raise DimensionError(f"rotate_pairs needs an even last axis, got {x.shape}")
    pairs = x.data.reshape(*x.data.shape[:-1], -1, 2)
    a, b = pairs[..., 0], pairs[..., 1]
    out = np.empty_like(pairs)
    out[..., 0] = a * cos - b * sin
    out[..., 1] = a * sin + b * cos

    def bw(g):
        gp = g.reshape(pairs.shape)
        ga, gb = gp[..., 0], gp[..., 1]
        gx = np.empty_like(pairs)
        gx[..., 0] = ga * cos + gb * sin
        gx[..., 1] = gb * cos - ga * sin
        return (gx.reshape(x.data.shape),)

    return _make(out.reshape(x.data.shape), (x,), bw)


# ---------------------------------------------------------------------
# linear algebra


def matmul(a, b):
    if not isinstance(a, Tensor) or not isinstance(b, Tensor):
        raise DimensionError("matmul takes two tensors")
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2:
        raise DimensionError(f"matmul needs rank >= 2 operands, got {ad.shape} @ {bd.shape}")
    if ad.shape[-1] != bd.shape[-2]:
        raise DimensionError(f"matmul inner dimensions differ: {ad.shape} @ {bd.shape}")
    out = ad @ bd

    def bw(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return (_unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape))

    return _make(out, (a, b), bw)


def softmax(x, axis=-1):
    m = x.data.max(axis=axis, keepdims=True)
    e = np.exp(x.data - m)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return _make(out, (x,), bw)


def layer_norm(x, gain, bias, eps=1e-5):
    """Normalize the last axis to zero mean, unit variance, then apply affine."""
    d = x.data.shape[-1]
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise DimensionError(
            f"layer_norm affine params must have shape ({d},), got {gain.data.shape} and {bias.data.shape}"
        )
    mu = x.data.mean(-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xh = xc * inv
    out = xh * gain.data + bias.data

    def bw(g):
        red = tuple(range(g.ndim - 1))
        dxh = g * gain.data
        gx = inv * (
            dxh - dxh.mean(-1, keepdims=True) - xh * (dxh * xh).mean(-1, keepdims=True)
        )
        return (gx, (g * xh).sum(red), g.sum(red))

    return _make(out, (x, gain, bias), bw)


# ---------------------------------------------------------------------
# convolution


def conv2d(x, w, b=None, stride=1, padding=0):
    """2-D convolution (cross-correlation) via im2col and one GEMM.

    ``x`` is [B,C,H,W] or [C,H,W]; ``w`` is [Cout,Cin,kh,kw]. The unfolded
    column matrix is kept on the node for the backward GEMMs; the input
    gradient is re-folded with one strided add per kernel tap.
    """
    squeeze = x.data.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4 or w.data.ndim != 4:
        raise DimensionError(f"conv2d expects [B,C,H,W] and [Co,Ci,kh,kw], got {x.shape} and {w.shape}")
    B, C, H, W = xd.shape
    Co, Ci, kh, kw = w.data.shape
    if C != Ci:
        raise DimensionError(f"conv2d channel mismatch: input {x.shape} vs weight {w.shape}")
    s, p = int(stride), int(padding)
    Ho = (H + 2 * p - kh) // s + 1
    Wo = (W + 2 * p - kw) // s + 1
    if Ho <= 0 or Wo <= 0:
        raise DimensionError(f"conv2d kernel {w.shape} does not fit input {x.shape} with padding {p}")

    rec = _grad_enabled and (x.requires_grad or w.requires_grad or (b is not None and b.requires_grad))
    if not rec:
        th = _torch()
        if th is not None:
            dt = np.result_type(xd.dtype, w.data.dtype, *(() if b is None else (b.data.dtype,)))
            y = th.nn.functional.conv2d(
                th.from_numpy(np.ascontiguousarray(xd, dtype=dt)),
                th.from_numpy(np.ascontiguousarray(w.data, dtype=dt)),
                None if b is None else th.from_numpy(np.ascontiguousarray(b.data, dtype=dt)),
                stride=s,
                padding=p,
            ).numpy()
            return Tensor(y[0] if squeeze else y, dtype=dt)

    xp = np.pad(xd, ((0, 0), (0, 0), (p, p), (p, p))) if p else xd
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::s, ::s]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(B * Ho * Wo, C * kh * kw)
    wmat = w.data.reshape(Co, -1)
    out = cols @ wmat.T
    if b is not None:
        out = out + b.data
    y = np.ascontiguousarray(out.reshape(B, Ho, Wo, Co).transpose(0, 3, 1, 2))
    if squeeze:
        y = y[0]

    need_x = x.requires_grad
    xp_shape = xp.shape

    def bw(g):
        gd = g[None] if squeeze else g
        gcols = np.ascontiguousarray(gd.transpose(0, 2, 3, 1)).reshape(B * Ho * Wo, Co)
        gw = (gcols.T @ cols).reshape(w.data.shape)
        gx = None
        if need_x:
            dcols = (gcols @ wmat).reshape(B, Ho, Wo, C, kh, kw).transpose(0, 3, 1, 2, 4, 5)
            dxp = np.zeros(xp_shape, dtype=gd.dtype)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i : i + (Ho - 1) * s + 1 : s, j : j + (Wo - 1) * s + 1 : s] += dcols[
                        :, :, :, :, i, j
                    ]
            gx = dxp[:, :, p : p + H, p : p + W] if p else dxp
            if squeeze:
                gx = gx[0]
        grads = [gx, gw]
        if b is not None:
            grads.append(gd.sum((0, 2, 3)))
        return tuple(grads)

    parents = (x, w) if b is None else (x, w, b)
    return _make(y, parents, bw)


def conv_transpose2d(x, w, b=None, stride=1):
    """Transposed 2-D convolution (fractional-stride upsampling).

    ``x`` is [B,Ci,H,W] or [Ci,H,W]; ``w`` is [Cin,Cout,kh,kw]. Output
    spatial size is (H-1)*stride + kh. Overlapping taps accumulate.
    """
    squeeze = x.data.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4 or w.data.ndim != 4:
        raise DimensionError(
            f"conv_transpose2d expects [B,Ci,H,W] and [Ci,Co,kh,kw], got {x.shape} and {w.shape}"
        )
    B, C, H, W = xd.shape
    Ci, Co, kh, kw = w.data.shape
    if C != Ci:
        raise DimensionError(f"conv_transpose2d channel mismatch: input {x.shape} vs weight {w.shape}")
    s = int(stride)
    Ho = (H - 1) * s + kh
    Wo = (W - 1) * s + kw

    rec = _grad_enabled and (x.requires_grad or w.requires_grad or (b is not None and b.requires_grad))
    if not rec:
        th = _torch()
        if th is not None:
            dt = np.result_type(xd.dtype, w.data.dtype, *(() if b is None else (b.data.dtype,)))
            y = th.nn.functional.conv_transpose2d(
                th.from_numpy(np.ascontiguousarray(xd, dtype=dt)),
                th.from_numpy(np.ascontiguousarray(w.data, dtype=dt)),
                None if b is None else th.from_numpy(np.ascontiguousarray(b.data, dtype=dt)),
                stride=s,
            ).numpy()
            return Tensor(y[0] if squeeze else y, dtype=dt)

    xmat = np.ascontiguousarray(xd.transpose(0, 2, 3, 1)).reshape(B * H * W, Ci)
    wmat = w.data.reshape(Ci, Co * kh * kw)
    cols = (xmat @ wmat).reshape(B, H, W, Co, kh, kw).transpose(0, 3, 1, 2, 4, 5)
    y = np.zeros((B, Co, Ho, Wo), dtype=np.result_type(xd.dtype, w.data.dtype))
    for i in range(kh):
        for j in range(kw):
            y[:, :, i : i + (H - 1) * s + 1 : s, j : j + (W - 1) * s + 1 : s] += cols[:, :, :, :, i, j]
    if b is not None:
        y = y + b.data[:, None, None]
    out = y[0] if squeeze else y

    def bw(g):
        gd = g[None] if squeeze else g
        gcols = np.empty((B, Co, H, W, kh, kw), dtype=gd.dtype)
        for i in range(kh):
            for j in range(kw):
                gcols[:, :, :, :, i, j] = gd[:, :, i : i + (H - 1) * s + 1 : s, j : j + (W - 1) * s + 1 : s]
        gmat = np.ascontiguousarray(gcols.transpose(0, 2, 3, 1, 4, 5)).reshape(B * H * W, Co * kh * kw)
        gx = np.ascontiguousarray((gmat @ wmat.T).reshape(B, H, W, Ci).transpose(0, 3, 1, 2))
        gw = (xmat.T @ gmat).reshape(w.data.shape)
        if squeeze:
            gx = gx[0]
        grads = [gx, gw]
        if b is not None:
            grads.append(gd.sum((0, 2, 3)))
        return tuple(grads)

    parents = (x, w) if b is None else (x, w, b)
    return _make(out, parents, bw)


# ---------------------------------------------------------------------
# gather / scatter / structure


def concat(tensors, axis=0):
    tensors = list(tensors)
    if not tensors:
        raise DimensionError("concat needs at least one tensor")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    ax = axis % out.ndim
    sizes = [t.data.shape[ax] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _make(out, tuple(tensors), bw)


def take_flat(x, index, out_shape=None):
    """Gather ``x.flat[index]`` into ``out_shape`` (default: index's shape).

    The index array is plain numpy and is not differentiated. Duplicate
    indices are allowed; their gradients sum in the backward scatter.
    """
    idx = np.asarray(index)
    if idx.size and (idx.min() < 0 or idx.max() >= x.data.size):
        raise DimensionError(f"take_flat index out of range for tensor of size {x.data.size}")
    flat = idx.reshape(-1)
    out = x.data.reshape(-1)[flat]
    out = out.reshape(idx.shape if out_shape is None else out_shape)

    def bw(g):
        gx = np.zeros(x.data.size, dtype=g.dtype)
        np.add.at(gx, flat, g.reshape(-1))
        return (gx.reshape(x.data.shape),)

    return _make(out, (x,), bw)


def scatter_flat(x, index, out_shape):
    """Scatter-add ``x`` into a zero tensor of ``out_shape`` at flat positions.

    Adjoint of take_flat: duplicate indices accumulate in the forward pass
    and the backward pass is a plain gather.
    """
    idx = np.asarray(index).reshape(-1)
    if idx.size != x.data.size:
        raise DimensionError(f"scatter_flat index size {idx.size} != value size {x.data.size}")
    n = int(np.prod(out_shape))
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise DimensionError(f"scatter_flat index out of range for output of size {n}")
    out = np.zeros(n, dtype=x.data.dtype)
    np.add.at(out, idx, x.data.reshape(-1))
    out = out.reshape(out_shape)

    def bw(g):
        return (g.reshape(-1)[idx].reshape(x.data.shape),)

    return _make(out, (x,), bw)


_reflect_cache = {}


def pad_reflect(x, pad):
    """Reflect-pad the last two axes by ``pad`` pixels on every side."""
    shape = x.data.shape
    if x.data.ndim < 2:
        raise DimensionError(f"pad_reflect needs at least 2 axes, got shape {shape}")
    H, W = shape[-2:]
    if pad >= H or pad >= W:
        raise DimensionError(f"reflect pad {pad} too large for spatial extent {(H, W)}")
    lead = int(np.prod(shape[:-2], dtype=np.int64))
    key = (lead, H, W, pad)
    idx = _reflect_cache.get(key)
    if idx is None:
        ri = np.pad(np.arange(H), pad, mode="reflect")
        ci = np.pad(np.arange(W), pad, mode="reflect")
        plane = ri[:, None] * W + ci[None, :]
        idx = (np.arange(lead, dtype=np.int64)[:, None, None] * (H * W) + plane[None]).reshape(-1)
        _reflect_cache[key] = idx
    out_shape = shape[:-2] + (H + 2 * pad, W + 2 * pad)
    return take_flat(x, idx, out_shape)


# ---------------------------------------------------------------------
# optimizer


class Adam:
    """Adam with bias correction; updates parameter arrays in place."""

    def __init__(self, params, lr=1e-4, betas=(0.9, 0.99), eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = np.asarray(p.grad, dtype=p.data.dtype)
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# ---------------------------------------------------------------------
# finite-difference oracle


def grad_check(f, inputs, h=1e-5, max_coords=64, rng=None, promote=True, floor=1e-6):
    """Compare tape gradients of ``f`` against central differences.

    ``f`` takes tensors positionally and returns a scalar tensor. Inputs are
    copied, so callers keep their originals. With ``promote`` the copies are
    float64, which keeps the finite-difference reference itself out of the
    noise floor; the graph code is identical in either dtype. At most
    ``max_coords`` coordinates per input are probed (all, if fewer).

    Returns the worst relative error ``|a - n| / max(|a|, |n|, scale, floor)``
    where ``scale`` is the largest tape-gradient magnitude of that input.
    Measuring near-zero coordinates against the input's gradient scale keeps
    the check meaningful in float32, where the difference quotient itself
    carries rounding noise of a few times 1e-4; a wrong backward formula
    still surfaces at full magnitude. Raises NumericError if the function
    value or any gradient is non-finite.
    """
    rng = rng or np.random.default_rng(0)
    dtype = np.float64 if promote else None
    xs = [Tensor(t.data.copy(), requires_grad=True, dtype=dtype or t.data.dtype) for t in inputs]

    y = f(*xs)
    if y.data.size != 1:
        raise DimensionError(f"grad_check target must be scalar, got shape {y.shape}")
    if not np.isfinite(y.data).all():
        raise NumericError("grad_check: function value is not finite")
    y.backward()

    worst = 0.0
    for x in xs:
        analytic = x.grad if x.grad is not None else np.zeros_like(x.data)
        if not np.isfinite(analytic).all():
            raise NumericError("grad_check: tape gradient is not finite")
        flat = x.data.reshape(-1)
        aflat = analytic.reshape(-1)
        scale = max(float(np.abs(aflat).max(initial=0.0)), floor)
        n = flat.size
        coords = np.arange(n) if n <= max_coords else rng.choice(n, size=max_coords, replace=False)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + h
            hp = flat[c]
            yp = _plain_eval(f, xs)
            flat[c] = orig - h
            hm = flat[c]
            ym = _plain_eval(f, xs)
            flat[c] = orig
            numeric = (yp - ym) / (hp - hm)
            if not np.isfinite(numeric):
                raise NumericError("grad_check: finite-difference estimate is not finite")
            a = aflat[c]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), scale)
            worst = max(worst, float(rel))
    return worst


def _plain_eval(f, xs):
    with no_grad():
        out = f(*xs)
    return float(out.data)
