"""Pure-numpy implementations of the hot kernels.

These are the fallback twins of the compiled extension in `_native.pyx`.
Both backends share one contract: the convolution kernels correlate a
pre-padded input in "valid" mode (padding policy lives in the callers), and
the pooling kernels break ties toward the first maximum in row-major window
order so scatter targets are deterministic.

Convolutions loop over kernel offsets and push the channel contraction into
BLAS; pooling uses stride tricks; the SGBM pass vectorizes each scanline
recurrence across the perpendicular axis.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

name = "numpy"


# ---------------------------------------------------------------------------
# convolution (valid mode, channels-last, batch axis first)
# ---------------------------------------------------------------------------

def conv3d_forward(x, k):
    """Correlate x (B,T,H,W,Ci) with k (kt,kh,kw,Ci,Co) -> (B,To,Ho,Wo,Co)."""
    B, T, H, W, Ci = x.shape
    kt, kh, kw, _, Co = k.shape
    To, Ho, Wo = T - kt + 1, H - kh + 1, W - kw + 1
    out = np.zeros((B, To, Ho, Wo, Co), dtype=x.dtype)
    for dt in range(kt):
        for dh in range(kh):
            for dw in range(kw):
                patch = x[:, dt:dt + To, dh:dh + Ho, dw:dw + Wo, :]
                out += patch @ k[dt, dh, dw]
    return out


def conv3d_grad_input(g, k, x_shape):
    kt, kh, kw, _, _ = k.shape
    B, T, H, W, Ci = x_shape
    To, Ho, Wo = g.shape[1:4]
    gx = np.zeros(x_shape, dtype=g.dtype)
    for dt in range(kt):
        for dh in range(kh):
            for dw in range(kw):
                gx[:, dt:dt + To, dh:dh + Ho, dw:dw + Wo, :] += g @ k[dt, dh, dw].T
    return gx


def conv3d_grad_kernel(x, g, k_shape):
    kt, kh, kw, Ci, Co = k_shape
    To, Ho, Wo = g.shape[1:4]
    gk = np.empty(k_shape, dtype=g.dtype)
    for dt in range(kt):
        for dh in range(kh):
            for dw in range(kw):
                patch = x[:, dt:dt + To, dh:dh + Ho, dw:dw + Wo, :]
                gk[dt, dh, dw] = np.tensordot(patch, g, axes=([0, 1, 2, 3], [0, 1, 2, 3]))
    return gk


def conv1d_forward(x, k):
    """Correlate x (B,L,Ci) with k (kl,Ci,Co) -> (B,Lo,Co)."""
    B, L, Ci = x.shape
    kl, _, Co = k.shape
    Lo = L - kl + 1
    out = np.zeros((B, Lo, Co), dtype=x.dtype)
    for dl in range(kl):
        out += x[:, dl:dl + Lo, :] @ k[dl]
    return out


def conv1d_grad_input(g, k, x_shape):
    kl = k.shape[0]
    Lo = g.shape[1]
    gx = np.zeros(x_shape, dtype=g.dtype)
    for dl in range(kl):
        gx[:, dl:dl + Lo, :] += g @ k[dl].T
    return gx


def conv1d_grad_kernel(x, g, k_shape):
    kl, Ci, Co = k_shape
    Lo = g.shape[1]
    gk = np.empty(k_shape, dtype=g.dtype)
    for dl in range(kl):
        gk[dl] = np.tensordot(x[:, dl:dl + Lo, :], g, axes=([0, 1], [0, 1]))
    return gk


# ---------------------------------------------------------------------------
# max pooling (any spatial rank; window/stride per spatial axis)
# ---------------------------------------------------------------------------

def maxpool_forward(x, window, stride):
    """Pool x (B, S1..Sn, C) -> (out, arg).

    `arg` stores, per output cell, the flat row-major index of the maximum
    inside its window (first maximum on ties).
    """
    n = len(window)
    axes = tuple(range(1, 1 + n))
    v = sliding_window_view(x, window_shape=window, axis=axes)
    sub = (slice(None),) + tuple(slice(None, None, s) for s in stride)
    v = v[sub]
    flat = v.reshape(v.shape[:n + 2] + (-1,))
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(out), arg


def maxpool_backward(g, arg, x_shape, window, stride):
    n = len(window)
    gx = np.zeros(x_shape, dtype=g.dtype)
    offs = np.unravel_index(arg, window)
    grids = np.indices(arg.shape, sparse=False)
    idx = [grids[0]]
    for d in range(n):
        idx.append(grids[1 + d] * stride[d] + offs[d])
    idx.append(grids[-1])
    np.add.at(gx, tuple(idx), g)
    return gx


# ---------------------------------------------------------------------------
# SGBM cost aggregation
# ---------------------------------------------------------------------------

_BIG = np.float32(1e30)


def _pass_along_cols(cost, p1, p2, reverse):
    """One directional pass of the SGM recurrence along axis 1."""
    H, W, D = cost.shape
    agg = np.empty_like(cost)
    order = range(W - 1, -1, -1) if reverse else range(W)
    prev = None
    for x in order:
        c = cost[:, x, :]
        if prev is None:
            agg[:, x, :] = c
        else:
            m = prev.min(axis=1, keepdims=True)
            lo = np.empty_like(prev)
            lo[:, 1:] = prev[:, :-1]
            lo[:, 0] = _BIG
            hi = np.empty_like(prev)
            hi[:, :-1] = prev[:, 1:]
            hi[:, -1] = _BIG
            best = np.minimum(np.minimum(prev, m + p2), np.minimum(lo, hi) + p1)
            agg[:, x, :] = c + best - m
        prev = agg[:, x, :]
    return agg


def sgbm_aggregate(cost, p1, p2):
    """Sum of 4 directional SGM passes (left, right, down, up) over (H,W,D)."""
    cost = np.ascontiguousarray(cost, dtype=np.float32)
    total = _pass_along_cols(cost, p1, p2, reverse=False)
    total += _pass_along_cols(cost, p1, p2, reverse=True)
    swapped = np.ascontiguousarray(cost.swapaxes(0, 1))
    total += _pass_along_cols(swapped, p1, p2, reverse=False).swapaxes(0, 1)
    total += _pass_along_cols(swapped, p1, p2, reverse=True).swapaxes(0, 1)
    return total
