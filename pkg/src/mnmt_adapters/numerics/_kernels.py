"""Row-wise fused kernels: layer norm, softmax, label-smoothed cross-entropy.

Two implementations live side by side. The numba versions are compiled with
``@njit(cache=True)`` and accumulate in float64; the numpy versions are the
reference fallback. Set ``MNMT_KERNELS=numpy`` before import to force the
fallback (or when numba is unavailable). Both operate on 2-D C-contiguous
arrays whose rows are the normalization axis.
"""

import os
import warnings

import numpy as np

_requested = os.environ.get("MNMT_KERNELS", "numba").strip().lower()

try:
    if _requested == "numpy":
        raise ImportError("numba disabled by MNMT_KERNELS=numpy")
    from numba import njit

    HAVE_NUMBA = True
except ImportError as exc:  # pragma: no cover - depends on environment
    if _requested != "numpy":
        warnings.warn(f"numba unavailable ({exc}); using numpy kernels")
    HAVE_NUMBA = False

BACKEND = "numba" if HAVE_NUMBA else "numpy"


# ---------------------------------------------------------------- numpy path

def layer_norm_fwd_np(x, gain, bias, eps):
    mean = x.mean(axis=1, keepdims=True)
    xc = x - mean
    var = (xc * xc).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    y = xhat * gain + bias
    return y.astype(x.dtype, copy=False), xhat.astype(x.dtype, copy=False), rstd[:, 0].astype(x.dtype)


def layer_norm_bwd_np(dy, xhat, gain, rstd):
    d = xhat.shape[1]
    dgain = (dy * xhat).sum(axis=0)
    dbias = dy.sum(axis=0)
    dxhat = dy * gain
    dx = (dxhat - dxhat.mean(axis=1, keepdims=True)
          - xhat * (dxhat * xhat).sum(axis=1, keepdims=True) / d) * rstd[:, None]
    return dx.astype(dy.dtype, copy=False), dgain, dbias


def softmax_fwd_np(x):
    z = x - x.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_bwd_np(y, dy):
    return y * (dy - (dy * y).sum(axis=1, keepdims=True))


def xent_np(logits, targets, weights, smoothing):
    """Returns (sum of weighted per-row losses, dlogits for that sum)."""
    v = logits.shape[1]
    z = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    rows = np.arange(logits.shape[0])
    nll = -logp[rows, targets]
    smooth = -logp.mean(axis=1)
    per_row = (1.0 - smoothing) * nll + smoothing * smooth
    total = float((per_row * weights).sum())
    q = np.full_like(logp, smoothing / v)
    q[rows, targets] += 1.0 - smoothing
    grad = (np.exp(logp) - q) * weights[:, None]
    return total, grad.astype(logits.dtype, copy=False)


# ---------------------------------------------------------------- numba path

if HAVE_NUMBA:

    @njit(cache=True)
    def layer_norm_fwd_nb(x, gain, bias, eps):
        n, d = x.shape
        y = np.empty_like(x)
        xhat = np.empty_like(x)
        rstd = np.empty(n, dtype=x.dtype)
        for i in range(n):
            s = 0.0
            for j in range(d):
                s += x[i, j]
            mu = s / d
            s2 = 0.0
            for j in range(d):
                c = x[i, j] - mu
                s2 += c * c
            r = 1.0 / np.sqrt(s2 / d + eps)
            rstd[i] = r
            for j in range(d):
                h = (x[i, j] - mu) * r
                xhat[i, j] = h
                y[i, j] = h * gain[j] + bias[j]
        return y, xhat, rstd

    @njit(cache=True)
    def layer_norm_bwd_nb(dy, xhat, gain, rstd):
        n, d = dy.shape
        dx = np.empty_like(dy)
        dgain = np.zeros(d, dtype=np.float64)
        dbias = np.zeros(d, dtype=np.float64)
        for i in range(n):
            a = 0.0
            b = 0.0
            for j in range(d):
                g = dy[i, j] * gain[j]
                a += g
                b += g * xhat[i, j]
                dgain[j] += dy[i, j] * xhat[i, j]
                dbias[j] += dy[i, j]
            a /= d
            b /= d
            for j in range(d):
                dx[i, j] = (dy[i, j] * gain[j] - a - xhat[i, j] * b) * rstd[i]
        return dx, dgain.astype(dy.dtype), dbias.astype(dy.dtype)

    @njit(cache=True)
    def softmax_fwd_nb(x):
        n, d = x.shape
        y = np.empty_like(x)
        for i in range(n):
            m = x[i, 0]
            for j in range(1, d):
                if x[i, j] > m:
                    m = x[i, j]
            s = 0.0
            for j in range(d):
                e = np.exp(x[i, j] - m)
                y[i, j] = e
                s += e
            inv = 1.0 / s
            for j in range(d):
                y[i, j] = y[i, j] * inv
        return y

    @njit(cache=True)
    def softmax_bwd_nb(y, dy):
        n, d = y.shape
        dx = np.empty_like(y)
        for i in range(n):
            s = 0.0
            for j in range(d):
                s += dy[i, j] * y[i, j]
            for j in range(d):
                dx[i, j] = y[i, j] * (dy[i, j] - s)
        return dx

    @njit(cache=True)
    def xent_nb(logits, targets, weights, smoothing):
        n, v = logits.shape
        grad = np.empty_like(logits)
        total = 0.0
        for i in range(n):
            m = logits[i, 0]
            for j in range(1, v):
                if logits[i, j] > m:
                    m = logits[i, j]
            s = 0.0
            for j in range(v):
                s += np.exp(logits[i, j] - m)
            lse = m + np.log(s)
            sum_logp = 0.0
            for j in range(v):
                sum_logp += logits[i, j] - lse
            t = targets[i]
            w = weights[i]
            nll = lse - logits[i, t]
            total += w * ((1.0 - smoothing) * nll - smoothing * sum_logp / v)
            u = smoothing / v
            for j in range(v):
                grad[i, j] = w * (np.exp(logits[i, j] - lse) - u)
            grad[i, t] -= w * (1.0 - smoothing)
        return total, grad


def _c(a):
    return np.ascontiguousarray(a)


if HAVE_NUMBA:

    def layer_norm_fwd(x, gain, bias, eps):
        return layer_norm_fwd_nb(_c(x), _c(gain), _c(bias), float(eps))

    def layer_norm_bwd(dy, xhat, gain, rstd):
        return layer_norm_bwd_nb(_c(dy), _c(xhat), _c(gain), _c(rstd))

    def softmax_fwd(x):
        return softmax_fwd_nb(_c(x))

    def softmax_bwd(y, dy):
        return softmax_bwd_nb(_c(y), _c(dy))

    def xent(logits, targets, weights, smoothing):
        total, grad = xent_nb(_c(logits), _c(targets).astype(np.int64),
                              _c(weights).astype(logits.dtype), float(smoothing))
        return float(total), grad

else:
    layer_norm_fwd = layer_norm_fwd_np
    layer_norm_bwd = layer_norm_bwd_np
    softmax_fwd = softmax_fwd_np
    softmax_bwd = softmax_bwd_np

    def xent(logits, targets, weights, smoothing):
        return xent_np(logits, targets.astype(np.int64), weights.astype(logits.dtype), float(smoothing))
