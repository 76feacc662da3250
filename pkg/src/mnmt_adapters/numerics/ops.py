"""Differentiable primitives.

Each op computes its forward value with numpy (or a fused kernel) and hands a
closure producing parent gradients to :func:`record`.
"""

import numpy as np

from . import _kernels as K
from .tensor import Tensor, record

LN_EPS = 1e-6


def _lift(x, like):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a, b):
    a = _lift(a, b) if not isinstance(a, Tensor) else a
    b = _lift(b, a)
    sa, sb = a.shape, b.shape

    def bw(g):
        return (_unbroadcast(g, sa) if a.requires_grad else None,
                _unbroadcast(g, sb) if b.requires_grad else None)

    return record(a.data + b.data, (a, b), bw)


def sub(a, b):
    a = _lift(a, b) if not isinstance(a, Tensor) else a
    b = _lift(b, a)
    sa, sb = a.shape, b.shape

    def bw(g):
        return (_unbroadcast(g, sa) if a.requires_grad else None,
                _unbroadcast(-g, sb) if b.requires_grad else None)

    return record(a.data - b.data, (a, b), bw)


def mul(a, b):
    a = _lift(a, b) if not isinstance(a, Tensor) else a
    b = _lift(b, a)

    def bw(g):
        return (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(g * a.data, b.shape) if b.requires_grad else None)

    return record(a.data * b.data, (a, b), bw)


def scale(a, c):
    c = a.dtype.type(c)
    return record(a.data * c, (a,), lambda g: (g * c,))


def matmul(a, b):
    """Batched matmul; ``b`` may be a 2-D weight shared across batch dims."""
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul needs ndim >= 2, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul shape mismatch {a.shape} @ {b.shape}")

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.requires_grad:
            if b.ndim == 2:
                k = a.shape[-1]
                gb = a.data.reshape(-1, k).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return record(a.data @ b.data, (a, b), bw)


def relu(a):
    mask = a.data > 0
    return record(np.where(mask, a.data, a.dtype.type(0)), (a,), lambda g: (g * mask,))


def reshape(a, shape):
    src = a.shape
    return record(a.data.reshape(shape), (a,), lambda g: (g.reshape(src),))


def transpose(a, axes):
    axes = tuple(axes) if axes else tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return record(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def sum(a, axis=None):
    shape = a.shape

    def bw(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).astype(a.dtype, copy=True),)

    return record(np.asarray(a.data.sum(axis=axis), dtype=a.dtype), (a,), bw)


def mean(a, axis=None):
    n = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(sum(a, axis), 1.0 / float(n))


def take_rows(table, ids):
    """Embedding lookup: ``table[ids]`` with a scatter-add gradient."""
    ids = np.asarray(ids)
    if ids.dtype.kind not in "iu":
        raise TypeError("ids must be integers")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"id out of range [0, {table.shape[0]})")

    def bw(g):
        out = np.zeros_like(table.data)
        np.add.at(out, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (out,)

    return record(table.data[ids], (table,), bw)


def _rows(x):
    return x.reshape(-1, x.shape[-1])


def softmax(x, axis=-1):
    if x.ndim == 0 or x.shape[axis] == 0:
        raise ValueError("softmax over an empty axis")
    moved = axis not in (-1, x.ndim - 1)
    data = np.moveaxis(x.data, axis, -1) if moved else x.data
    y = K.softmax_fwd(_rows(data)).reshape(data.shape)
    out = np.moveaxis(y, -1, axis) if moved else y

    def bw(g):
        gd = np.moveaxis(g, axis, -1) if moved else g
        dx = K.softmax_bwd(_rows(y), _rows(gd)).reshape(y.shape)
        return (np.moveaxis(dx, -1, axis) if moved else dx,)

    return record(out, (x,), bw)


def layer_norm(x, gain, bias, eps=LN_EPS):
    """Normalize over the last axis (population variance), then scale/shift."""
    d = x.shape[-1]
    if d < 2:
        raise ValueError(f"layer_norm needs last dim >= 2, got {d}")
    gain = _lift(gain, x)
    bias = _lift(bias, x)
    y, xhat, rstd = K.layer_norm_fwd(_rows(x.data), gain.data, bias.data, eps)

    def bw(g):
        dx, dgain, dbias = K.layer_norm_bwd(_rows(g), xhat, gain.data, rstd)
        return dx.reshape(x.shape), dgain, dbias

    return record(y.reshape(x.shape), (x, gain, bias), bw)


def cross_entropy(logits, targets, weights, smoothing=0.0):
    """Weighted mean of label-smoothed token cross-entropy.

    ``weights`` is a 0/1 mask (or any nonnegative weights) over target
    positions; the mean divides by its sum.
    """
    targets = np.asarray(targets)
    weights = np.asarray(weights, dtype=logits.dtype)
    denom = float(weights.sum())
    if denom <= 0:
        raise ValueError("cross_entropy over an all-masked target")
    v = logits.shape[-1]
    if targets.size and (targets.min() < 0 or targets.max() >= v):
        raise IndexError("target id out of range")
    total, grad = K.xent(_rows(logits.data), targets.reshape(-1), weights.reshape(-1), smoothing)
    grad = grad.reshape(logits.shape)
    inv = logits.dtype.type(1.0 / denom)
    return record(np.asarray(total / denom, dtype=logits.dtype), (logits,),
                  lambda g: (grad * (g * inv),))


def dropout(x, rate, rng):
    if rate <= 0.0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / x.dtype.type(1.0 - rate)
    return mul(x, Tensor(keep))
