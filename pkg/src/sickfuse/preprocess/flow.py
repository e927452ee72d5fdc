"""Dense optical flow via pyramidal polynomial expansion.

Each neighborhood of both frames is approximated by a quadratic polynomial
f(u) ~ u'Au + b'u + c under a Gaussian applicability weight; equating the
expansions of the two frames turns a displacement estimate into a per-pixel
2x2 linear system, averaged over a window for robustness and refined
iteratively over an image pyramid.

Flow convention: out[y, x] = (dx, dy) is the motion of the content at (x, y)
from `prev` to `next`, i.e. next(p + d) ~ prev(p).
"""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ..errors import ShapeError


@dataclass
class FarnebackParams:
    levels: int = 3          # pyramid levels including the full resolution
    scale: float = 0.5       # downsampling factor between levels
    window: int = 15         # averaging window for the normal equations
    iterations: int = 3      # displacement refinements per level
    poly_n: int = 5          # polynomial expansion neighborhood (odd)
    poly_sigma: float = 1.1  # Gaussian applicability std


@dataclass
class FlowField:
    """Per-pixel (dx, dy) displacement in pixels, shape (H, W, 2)."""

    flow: np.ndarray

    @property
    def dx(self):
        return self.flow[..., 0]

    @property
    def dy(self):
        return self.flow[..., 1]

    def magnitude(self):
        return np.hypot(self.dx, self.dy)


def _to_gray(img):
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr @ np.array([0.299, 0.587, 0.114])
    if arr.max() > 1.5:
        arr = arr / 255.0
    return arr


def _poly_expand(f, n, sigma):
    """Quadratic expansion coefficients: A (H,W,2,2), b (H,W,2)."""
    half = n // 2
    x = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    g /= g.sum()
    gx = x * g
    gxx = x * x * g

    def corr(img, ky, kx):
        tmp = ndimage.correlate1d(img, ky, axis=0, mode="nearest")
        return ndimage.correlate1d(tmp, kx, axis=1, mode="nearest")

    c1 = corr(f, g, g)
    cx = corr(f, g, gx)
    cy = corr(f, gx, g)
    cxx = corr(f, g, gxx)
    cyy = corr(f, gxx, g)
    cxy = corr(f, gx, gx)

    s2 = float((g * x * x).sum())
    s4 = float((g * x ** 4).sum())
    # basis order (1, x, y, x^2, y^2, xy); odd moments vanish
    G = np.array([
        [1.0, 0.0, 0.0, s2, s2, 0.0],
        [0.0, s2, 0.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, s2, 0.0, 0.0, 0.0],
        [s2, 0.0, 0.0, s4, s2 * s2, 0.0],
        [s2, 0.0, 0.0, s2 * s2, s4, 0.0],
        [0.0, 0.0, 0.0, 0.0, 0.0, s2 * s2],
    ])
    Ginv = np.linalg.inv(G)
    coeffs = np.einsum("ij,jhw->ihw", Ginv,
                       np.stack([c1, cx, cy, cxx, cyy, cxy]))
    _, rx, ry, rxx, ryy, rxy = coeffs
    A = np.empty(f.shape + (2, 2))
    A[..., 0, 0] = rxx
    A[..., 0, 1] = rxy / 2.0
    A[..., 1, 0] = rxy / 2.0
    A[..., 1, 1] = ryy
    b = np.stack([rx, ry], axis=-1)
    return A, b


def _warp(field, flow):
    """Bilinear sample of per-pixel `field` at p + flow (components last)."""
    H, W = field.shape[:2]
    yy, xx = np.meshgrid(np.arange(H, dtype=np.float64),
                         np.arange(W, dtype=np.float64), indexing="ij")
    coords = [yy + flow[..., 1], xx + flow[..., 0]]
    if field.ndim == 2:
        return ndimage.map_coordinates(field, coords, order=1, mode="nearest")
    out = np.empty_like(field)
    for idx in np.ndindex(field.shape[2:]):
        sl = (slice(None), slice(None)) + idx
        out[sl] = ndimage.map_coordinates(field[sl], coords, order=1, mode="nearest")
    return out


def _refine(A1, b1, A2, b2, flow, window):
    A2w = _warp(A2, flow)
    b2w = _warp(b2, flow)
    A = 0.5 * (A1 + A2w)
    db = -0.5 * (b2w - b1) + np.einsum("hwij,hwj->hwi", A, flow)

    g11 = A[..., 0, 0] ** 2 + A[..., 0, 1] ** 2
    g12 = A[..., 0, 0] * A[..., 0, 1] + A[..., 0, 1] * A[..., 1, 1]
    g22 = A[..., 0, 1] ** 2 + A[..., 1, 1] ** 2
    h1 = A[..., 0, 0] * db[..., 0] + A[..., 0, 1] * db[..., 1]
    h2 = A[..., 0, 1] * db[..., 0] + A[..., 1, 1] * db[..., 1]

    size = (window, window)
    g11 = ndimage.uniform_filter(g11, size, mode="nearest")
    g12 = ndimage.uniform_filter(g12, size, mode="nearest")
    g22 = ndimage.uniform_filter(g22, size, mode="nearest")
    h1 = ndimage.uniform_filter(h1, size, mode="nearest")
    h2 = ndimage.uniform_filter(h2, size, mode="nearest")

    det = g11 * g22 - g12 * g12
    safe = np.abs(det) > 1e-14
    inv_det = np.where(safe, 1.0 / np.where(safe, det, 1.0), 0.0)
    out = np.empty_like(flow)
    out[..., 0] = (g22 * h1 - g12 * h2) * inv_det
    out[..., 1] = (g11 * h2 - g12 * h1) * inv_det
    return out


def _downscale(img):
    return ndimage.gaussian_filter(img, 1.0, mode="nearest")[::2, ::2]


def farneback_flow(prev, next_, params: FarnebackParams | None = None) -> FlowField:
    """Dense displacement field from `prev` to `next_` (grayscale internally)."""
    params = params or FarnebackParams()
    f1 = _to_gray(prev)
    f2 = _to_gray(next_)
    if f1.shape != f2.shape:
        raise ShapeError(f"frame sizes differ: {f1.shape} vs {f2.shape}")

    pyr1, pyr2 = [f1], [f2]
    for _ in range(params.levels - 1):
        if min(pyr1[-1].shape) < 2 * params.poly_n:
            break
        pyr1.append(_downscale(pyr1[-1]))
        pyr2.append(_downscale(pyr2[-1]))

    flow = np.zeros(pyr1[-1].shape + (2,))
    for lvl in range(len(pyr1) - 1, -1, -1):
        a1, b1 = _poly_expand(pyr1[lvl], params.poly_n, params.poly_sigma)
        a2, b2 = _poly_expand(pyr2[lvl], params.poly_n, params.poly_sigma)
        for _ in range(params.iterations):
            flow = _refine(a1, b1, a2, b2, flow, params.window)
        if lvl:
            up = np.repeat(np.repeat(flow, 2, axis=0), 2, axis=1) * 2.0
            flow = up[:pyr1[lvl - 1].shape[0], :pyr1[lvl - 1].shape[1]]
    return FlowField(np.ascontiguousarray(flow))


def flow_polar(field: FlowField):
    """(angle in [0, 2pi), magnitude) of each displacement."""
    angle = np.arctan2(field.dy, field.dx) % (2.0 * np.pi)
    return angle, field.magnitude()


def _hsv_to_rgb(h, s, v):
    i = np.floor(h * 6.0).astype(int) % 6
    f = h * 6.0 - np.floor(h * 6.0)
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b], axis=-1)


def flow_to_rgb(field: FlowField) -> np.ndarray:
    """Polar color coding: hue = direction, value = relative magnitude.

    The magnitude channel is normalized by the frame's own maximum, so a
    zero-flow frame maps to black and scaling all displacements leaves hue
    untouched. Returns float RGB in [0, 1], shape (H, W, 3).
    """
    angle, mag = flow_polar(field)
    peak = mag.max()
    value = mag / peak if peak > 0 else np.zeros_like(mag)
    hue = angle / (2.0 * np.pi)
    sat = np.ones_like(hue)
    return _hsv_to_rgb(hue, sat, value)
