"""Differentiable operations recorded on the active tape.

Every op is a pure function Tensor -> Tensor. When a Tape is active and any
input requires gradients, the op records a closure computing its
vector-Jacobian product; `tensor.backward` replays those in reverse.

Convolutions and pooling delegate their inner loops to the selected kernel
backend (compiled extension or numpy fallback); everything else is plain
numpy. Inputs may be batched (leading batch axis) or single-sample; gradient
shapes always match the original operands.
"""

from __future__ import annotations

import numpy as np

from .. import backend
from ..errors import ConfigError, DegenerateBatch, ShapeError
from .tensor import Tensor, current_tape


def _wrap(data, inputs, backward_fn):
    req = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=req, checked=False)
    tape = current_tape()
    if tape is not None and req:
        tape.record(out, inputs, backward_fn)
    return out


def _unbroadcast(g, shape):
    """Reduce gradient g back to `shape` after numpy broadcasting."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def constant(data, dtype=None) -> Tensor:
    return Tensor(np.asarray(data, dtype=dtype), checked=False)


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)
    return _wrap(a.data + b.data, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)
    return _wrap(a.data - b.data, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    def bwd(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)
    return _wrap(a.data * b.data, (a, b), bwd)


def div(a: Tensor, b: Tensor) -> Tensor:
    def bwd(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb
    return _wrap(a.data / b.data, (a, b), bwd)


def neg(a: Tensor) -> Tensor:
    return _wrap(-a.data, (a,), lambda g: (-g,))


def add_scalar(a: Tensor, c: float) -> Tensor:
    return _wrap(a.data + c, (a,), lambda g: (g,))


def mul_scalar(a: Tensor, c: float) -> Tensor:
    return _wrap(a.data * c, (a,), lambda g: (g * c,))


def log(a: Tensor) -> Tensor:
    # callers clamp away from zero first (see model.loss_crossentropy)
    def bwd(g):
        return (g / a.data,)
    return _wrap(np.log(a.data), (a,), bwd)


def sqrt(a: Tensor) -> Tensor:
    root = np.sqrt(a.data)

    def bwd(g):
        # subgradient guard at exactly zero; sqrt'(0) is unbounded
        return (g / (2.0 * np.maximum(root, 1e-300)),)
    return _wrap(root, (a,), bwd)


def maximum_scalar(a: Tensor, c: float) -> Tensor:
    """Elementwise max(a, c); gradient flows only where a > c."""
    def bwd(g):
        return (g * (a.data > c),)
    return _wrap(np.maximum(a.data, c), (a,), bwd)


# ---------------------------------------------------------------------------
# reductions and shape surgery
# ---------------------------------------------------------------------------

def sum(a: Tensor, axis=None, keepdims=False) -> Tensor:  # noqa: A001
    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        gg = g
        if not keepdims:
            gg = np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.shape).copy(),)
    return _wrap(a.data.sum(axis=axis, keepdims=keepdims), (a,), bwd)


def mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    if axis is None:
        count = a.size
    elif isinstance(axis, int):
        count = a.shape[axis]
    else:
        count = int(np.prod([a.shape[ax] for ax in axis]))

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g / count, a.shape).copy(),)
        gg = g
        if not keepdims:
            gg = np.expand_dims(g, axis)
        return (np.broadcast_to(gg / count, a.shape).copy(),)
    return _wrap(a.data.mean(axis=axis, keepdims=keepdims), (a,), bwd)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)

    def bwd(g):
        return (g.reshape(a.shape),)
    return _wrap(a.data.reshape(shape), (a,), bwd)


def flatten(a: Tensor, keep_batch=True) -> Tensor:
    """Collapse to (B, -1) when keep_batch, else to a flat vector."""
    if keep_batch:
        return reshape(a, (a.shape[0], -1))
    return reshape(a, (-1,))


def concat(tensors, axis=-1) -> Tensor:
    tensors = list(tensors)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.ascontiguousarray(piece)
                     for piece in np.split(g, splits, axis=axis))
    return _wrap(np.concatenate([t.data for t in tensors], axis=axis),
                 tuple(tensors), bwd)


def slice_last(a: Tensor, start: int, stop: int) -> Tensor:
    def bwd(g):
        gx = np.zeros(a.shape, dtype=g.dtype)
        gx[..., start:stop] = g
        return (gx,)
    return _wrap(np.ascontiguousarray(a.data[..., start:stop]), (a,), bwd)


def index_axis1(a: Tensor, i: int) -> Tensor:
    """Select a[:, i] (one timestep of a batched sequence)."""
    def bwd(g):
        gx = np.zeros(a.shape, dtype=g.dtype)
        gx[:, i] = g
        return (gx,)
    return _wrap(np.ascontiguousarray(a.data[:, i]), (a,), bwd)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")

    def bwd(g):
        return g @ b.data.T, a.data.T @ g
    return _wrap(a.data @ b.data, (a, b), bwd)


def dense(x: Tensor, weights: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map over the last axis: (.., n) @ (n, m) + (m,)."""
    if weights.ndim != 2 or x.shape[-1] != weights.shape[0]:
        raise ShapeError(f"dense: input {x.shape} vs weights {weights.shape}")
    if bias is not None and bias.shape != (weights.shape[1],):
        raise ShapeError(f"dense: bias {bias.shape} vs weights {weights.shape}")
    n, m = weights.shape
    lead = x.shape[:-1]
    xf = x.data.reshape(-1, n)
    y = xf @ weights.data
    if bias is not None:
        y = y + bias.data

    def bwd(g):
        gf = g.reshape(-1, m)
        gx = (gf @ weights.data.T).reshape(x.shape)
        gw = xf.T @ gf
        if bias is None:
            return gx, gw
        return gx, gw, gf.sum(axis=0)
    inputs = (x, weights) if bias is None else (x, weights, bias)
    return _wrap(y.reshape(lead + (m,)), inputs, bwd)


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def relu(a: Tensor) -> Tensor:
    def bwd(g):
        return (g * (a.data > 0),)
    return _wrap(np.maximum(a.data, 0), (a,), bwd)


def sigmoid(a: Tensor) -> Tensor:
    # stable form: no exp of large positive values
    out = np.where(a.data >= 0,
                   1.0 / (1.0 + np.exp(-np.abs(a.data))),
                   np.exp(-np.abs(a.data)) / (1.0 + np.exp(-np.abs(a.data))))

    def bwd(g):
        return (g * out * (1.0 - out),)
    return _wrap(out, (a,), bwd)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def bwd(g):
        return (g * (1.0 - out * out),)
    return _wrap(out, (a,), bwd)


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis, computed with max-subtraction."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - dot),)
    return _wrap(out, (a,), bwd)


def identity(a: Tensor) -> Tensor:
    return _wrap(a.data.copy(), (a,), lambda g: (g,))


_ACTIVATIONS = {
    "relu": relu,
    "softmax": softmax,
    "linear": identity,
    "sigmoid": sigmoid,
    "tanh": tanh,
}


def activation(a: Tensor, kind: str) -> Tensor:
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ConfigError(f"unknown activation {kind!r}") from None
    return fn(a)


# ---------------------------------------------------------------------------
# convolution and pooling
# ---------------------------------------------------------------------------

def _same_pad(k: int):
    return (k - 1) // 2, k // 2


def _pad_amounts(kdims, padding):
    if padding == "valid":
        return [(0, 0) for _ in kdims]
    if padding == "same":
        return [_same_pad(k) for k in kdims]
    raise ConfigError(f"unknown padding mode {padding!r}")


def conv3d(x: Tensor, kernel: Tensor, bias: Tensor | None = None,
           padding: str = "same", l2: float = 0.0) -> Tensor:
    """3-D correlation of (T,H,W,Cin) [or batched] with (kt,kh,kw,Cin,Cout).

    Stride is 1; downsampling is pooling's job. With l2 > 0 the op appends
    l2 * sum(kernel**2) to the active tape's regularization accumulator.
    """
    if kernel.ndim != 5:
        raise ShapeError(f"conv3d kernel must be rank 5, got {kernel.shape}")
    batched = x.ndim == 5
    if not batched and x.ndim != 4:
        raise ShapeError(f"conv3d input must be rank 4 or 5, got {x.shape}")
    xb = x.data if batched else x.data[None]
    kt, kh, kw, cin, cout = kernel.shape
    if xb.shape[-1] != cin:
        raise ShapeError(f"conv3d: input channels {xb.shape[-1]} != kernel Cin {cin}")
    pads = _pad_amounts((kt, kh, kw), padding)
    padded = np.pad(xb, [(0, 0)] + pads + [(0, 0)]) if any(p != (0, 0) for p in pads) else xb
    if any(k > s for k, s in zip((kt, kh, kw), padded.shape[1:4])):
        raise ShapeError(f"conv3d kernel {kernel.shape[:3]} exceeds padded input "
                         f"{padded.shape[1:4]}")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"conv3d bias {bias.shape} != ({cout},)")

    y = backend.conv3d_forward(padded, kernel.data)
    if bias is not None:
        y = y + bias.data

    def bwd(g):
        if not batched and g.ndim == 4:
            g = g[None]
        gxp = backend.conv3d_grad_input(g, kernel.data, padded.shape)
        slices = tuple(slice(lo, gxp.shape[1 + i] - hi)
                       for i, (lo, hi) in enumerate(pads))
        gx = np.ascontiguousarray(gxp[(slice(None),) + slices])
        if not batched:
            gx = gx[0]
        gk = backend.conv3d_grad_kernel(padded, g, kernel.shape)
        if bias is None:
            return gx, gk
        return gx, gk, g.sum(axis=(0, 1, 2, 3))

    inputs = (x, kernel) if bias is None else (x, kernel, bias)
    out = _wrap(y if batched else y[0], inputs, bwd)
    _accumulate_l2(kernel, l2)
    return out


def conv1d(x: Tensor, kernel: Tensor, bias: Tensor | None = None,
           padding: str = "same", l2: float = 0.0) -> Tensor:
    """1-D correlation of (L,Cin) [or batched] with (k,Cin,Cout)."""
    if kernel.ndim != 3:
        raise ShapeError(f"conv1d kernel must be rank 3, got {kernel.shape}")
    batched = x.ndim == 3
    if not batched and x.ndim != 2:
        raise ShapeError(f"conv1d input must be rank 2 or 3, got {x.shape}")
    xb = x.data if batched else x.data[None]
    kl, cin, cout = kernel.shape
    if xb.shape[-1] != cin:
        raise ShapeError(f"conv1d: input channels {xb.shape[-1]} != kernel Cin {cin}")
    pads = _pad_amounts((kl,), padding)
    padded = np.pad(xb, [(0, 0)] + pads + [(0, 0)]) if any(p != (0, 0) for p in pads) else xb
    if kl > padded.shape[1]:
        raise ShapeError(f"conv1d kernel {kl} exceeds padded length {padded.shape[1]}")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"conv1d bias {bias.shape} != ({cout},)")

    y = backend.conv1d_forward(padded, kernel.data)
    if bias is not None:
        y = y + bias.data

    def bwd(g):
        if not batched and g.ndim == 2:
            g = g[None]
        gxp = backend.conv1d_grad_input(g, kernel.data, padded.shape)
        lo, hi = pads[0]
        gx = np.ascontiguousarray(gxp[:, lo:gxp.shape[1] - hi, :])
        if not batched:
            gx = gx[0]
        gk = backend.conv1d_grad_kernel(padded, g, kernel.shape)
        if bias is None:
            return gx, gk
        return gx, gk, g.sum(axis=(0, 1))

    inputs = (x, kernel) if bias is None else (x, kernel, bias)
    out = _wrap(y if batched else y[0], inputs, bwd)
    _accumulate_l2(kernel, l2)
    return out


def _accumulate_l2(kernel: Tensor, l2: float):
    tape = current_tape()
    if tape is None or l2 == 0.0 or not kernel.requires_grad:
        return
    tape.reg_terms.append(mul_scalar(sum(mul(kernel, kernel)), l2))


def maxpool(x: Tensor, window, stride=None) -> Tensor:
    """Max pooling over the spatial axes of (S.., C) or (B, S.., C)."""
    window = tuple(int(w) for w in window)
    stride = window if stride is None else tuple(int(s) for s in stride)
    if len(stride) != len(window):
        raise ConfigError(f"maxpool stride rank {stride} != window rank {window}")
    n = len(window)
    batched = x.ndim == n + 2
    if not batched and x.ndim != n + 1:
        raise ShapeError(f"maxpool: rank {x.ndim} input with {n}-d window")
    xb = x.data if batched else x.data[None]
    spatial = xb.shape[1:-1]
    if any(w > s for w, s in zip(window, spatial)):
        raise ShapeError(f"maxpool window {window} larger than input {spatial}")

    out, arg = backend.maxpool_forward(xb, window, stride)

    def bwd(g):
        if not batched and g.ndim == out.ndim - 1:
            g = g[None]
        gx = backend.maxpool_backward(np.ascontiguousarray(g), arg, xb.shape,
                                      window, stride)
        return (gx if batched else gx[0],)
    return _wrap(out if batched else out[0], (x,), bwd)


# ---------------------------------------------------------------------------
# batch normalization
# ---------------------------------------------------------------------------

class RunningStats:
    """Mutable running mean/variance buffers for one batchnorm layer."""

    __slots__ = ("mean", "var")

    def __init__(self, channels: int, dtype=np.float64):
        self.mean = np.zeros(channels, dtype=dtype)
        self.var = np.ones(channels, dtype=dtype)

    def update(self, batch_mean, batch_var, momentum):
        self.mean = (1.0 - momentum) * self.mean + momentum * batch_mean
        self.var = (1.0 - momentum) * self.var + momentum * batch_var


def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor, running: RunningStats,
              mode: str, eps: float = 1e-5, momentum: float = 0.1) -> Tensor:
    """Normalize per channel (last axis) over batch and spatial axes.

    Train mode uses batch statistics (population variance) and updates the
    running buffers; infer mode applies the stored running statistics.
    """
    if x.ndim < 2:
        raise ShapeError(f"batchnorm needs a batched input, got {x.shape}")
    channels = x.shape[-1]
    if gamma.shape != (channels,) or beta.shape != (channels,):
        raise ShapeError(f"batchnorm gamma/beta must be ({channels},)")
    if mode == "train":
        if x.shape[0] < 2:
            raise DegenerateBatch(f"batchnorm train mode needs batch >= 2, got {x.shape[0]}")
        axes = tuple(range(x.ndim - 1))
        mu = mean(x, axis=axes, keepdims=True)
        centered = sub(x, mu)
        var = mean(mul(centered, centered), axis=axes, keepdims=True)
        denom = sqrt(add_scalar(var, eps))
        xhat = div(centered, denom)
        running.update(mu.data.reshape(channels), var.data.reshape(channels), momentum)
    elif mode == "infer":
        rm = constant(running.mean, dtype=x.dtype)
        rv = constant(np.sqrt(running.var + eps), dtype=x.dtype)
        xhat = div(sub(x, rm), rv)
    else:
        raise ConfigError(f"batchnorm mode must be train|infer, got {mode!r}")
    return add(mul(xhat, gamma), beta)


# ---------------------------------------------------------------------------
# dropout
# ---------------------------------------------------------------------------

def dropout(x: Tensor, rate: float, mode: str, rng=None) -> Tensor:
    """Inverted dropout: train zeroes with prob `rate`, scales by 1/(1-rate)."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0,1), got {rate}")
    if mode == "infer" or rate == 0.0:
        return identity(x)
    if mode != "train":
        raise ConfigError(f"dropout mode must be train|infer, got {mode!r}")
    if rng is None:
        raise ConfigError("dropout in train mode needs an rng")
    keep = (rng.random(x.shape) >= rate)
    scale = keep.astype(x.dtype) / (1.0 - rate)

    def bwd(g):
        return (g * scale,)
    return _wrap(x.data * scale, (x,), bwd)


# ---------------------------------------------------------------------------
# LSTM
# ---------------------------------------------------------------------------

def lstm_forward(x: Tensor, wx: Tensor, wh: Tensor, b: Tensor,
                 recurrent_dropout: float = 0.0, mode: str = "infer",
                 rng=None, return_sequence: bool = False) -> Tensor:
    """Standard LSTM over (L,F) or (B,L,F) input; gate order i,f,g,o.

    Recurrent dropout samples ONE mask per sequence (per batch row) and
    applies it, inverted-scaled, to the hidden state entering the recurrent
    matmul in train mode. Returns the last hidden state (B,H) or the full
    hidden sequence (B,L,H) when return_sequence is set.
    """
    batched = x.ndim == 3
    if not batched and x.ndim != 2:
        raise ShapeError(f"lstm input must be rank 2 or 3, got {x.shape}")
    if wx.ndim != 2 or wh.ndim != 2 or wx.shape[1] != wh.shape[1]:
        raise ShapeError(f"lstm weights inconsistent: wx {wx.shape}, wh {wh.shape}")
    hidden = wh.shape[0]
    if wx.shape[1] != 4 * hidden or b.shape != (4 * hidden,):
        raise ShapeError(f"lstm params inconsistent with hidden size {hidden}")
    feat = wx.shape[0]
    xb = x if batched else reshape(x, (1,) + x.shape)
    if xb.shape[-1] != feat:
        raise ShapeError(f"lstm input features {xb.shape[-1]} != wx rows {feat}")
    B, L, _ = xb.shape
    if not 0.0 <= recurrent_dropout < 1.0:
        raise ConfigError(f"recurrent dropout must be in [0,1), got {recurrent_dropout}")

    mask = None
    if mode == "train" and recurrent_dropout > 0.0:
        if rng is None:
            raise ConfigError("recurrent dropout in train mode needs an rng")
        keep = rng.random((B, hidden)) >= recurrent_dropout
        mask = constant(keep.astype(x.dtype) / (1.0 - recurrent_dropout))

    h = constant(np.zeros((B, hidden), dtype=x.dtype))
    c = constant(np.zeros((B, hidden), dtype=x.dtype))
    outputs = []
    for t in range(L):
        xt = index_axis1(xb, t)
        h_rec = mul(h, mask) if mask is not None else h
        z = add(dense(xt, wx, b), matmul(h_rec, wh))
        i = sigmoid(slice_last(z, 0, hidden))
        f = sigmoid(slice_last(z, hidden, 2 * hidden))
        g = tanh(slice_last(z, 2 * hidden, 3 * hidden))
        o = sigmoid(slice_last(z, 3 * hidden, 4 * hidden))
        c = add(mul(f, c), mul(i, g))
        h = mul(o, tanh(c))
        if return_sequence:
            outputs.append(reshape(h, (B, 1, hidden)))
    if return_sequence:
        seq = concat(outputs, axis=1)
        return seq if batched else reshape(seq, (L, hidden))
    return h if batched else reshape(h, (hidden,))
