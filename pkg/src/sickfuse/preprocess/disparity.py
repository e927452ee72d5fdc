"""Stereo disparity via semi-global block matching.

Pipeline: 5x5 block SAD cost volume -> 4-direction semi-global aggregation
with P1/P2 smoothness penalties (kernel backend) -> winner-take-all, then a
uniqueness test and a left-right consistency check mark unreliable pixels
invalid instead of fabricating depth.
"""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .. import backend
from ..errors import ConfigError, ShapeError

_BIG = np.float32(1e9)


@dataclass
class DisparityMap:
    """Per-pixel horizontal disparity in pixels with an explicit validity mask."""

    disparity: np.ndarray  # (H, W) float64 in [0, max_disparity]
    valid: np.ndarray      # (H, W) bool
    max_disparity: int

    def valid_fraction(self) -> float:
        return float(self.valid.mean())


def _to_gray_255(img):
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr @ np.array([0.299, 0.587, 0.114])
    if arr.max() <= 1.5:
        arr = arr * 255.0
    return arr


def _sad_cost_volume(left, right, block, max_disparity):
    H, W = left.shape
    cost = np.empty((H, W, max_disparity), dtype=np.float32)
    area = block * block
    for d in range(max_disparity):
        shifted = np.empty_like(right)
        shifted[:, d:] = right[:, :W - d]
        shifted[:, :d] = right[:, :1]  # replicate: x < d has no true counterpart
        diff = np.abs(left - shifted)
        cost[:, :, d] = ndimage.uniform_filter(diff, block, mode="nearest") * area
    return cost


def sgbm_disparity(left, right, block: int = 5, max_disparity: int = 64,
                   p1: float | None = None, p2: float | None = None,
                   uniqueness_ratio: float = 10.0,
                   lr_max_diff: int = 1) -> DisparityMap:
    """Disparity of a rectified pair; invalid pixels are masked, not guessed."""
    lg = _to_gray_255(left)
    rg = _to_gray_255(right)
    if lg.shape != rg.shape:
        raise ShapeError(f"stereo pair sizes differ: {lg.shape} vs {rg.shape}")
    H, W = lg.shape
    if max_disparity >= W:
        raise ConfigError(f"max_disparity {max_disparity} must be < image width {W}")
    if p1 is None:
        p1 = 8.0 * block * block
    if p2 is None:
        p2 = 32.0 * block * block

    cost = _sad_cost_volume(lg, rg, block, max_disparity)
    agg = backend.sgbm_aggregate(cost, np.float32(p1), np.float32(p2))

    disp = agg.argmin(axis=2)
    best = np.take_along_axis(agg, disp[..., None], axis=2)[..., 0]

    # uniqueness: the winner must beat every non-adjacent candidate by the
    # configured margin, otherwise the match is ambiguous (e.g. no texture)
    masked = agg.copy()
    for off in (-1, 0, 1):
        idx = np.clip(disp + off, 0, max_disparity - 1)
        np.put_along_axis(masked, idx[..., None], _BIG, axis=2)
    second = masked.min(axis=2)
    valid = second * 100.0 > best * (100.0 + uniqueness_ratio)

    # left-right consistency on the aggregated volume
    agg_r = np.full_like(agg, _BIG)
    for d in range(max_disparity):
        if d:
            agg_r[:, :W - d, d] = agg[:, d:, d]
        else:
            agg_r[:, :, 0] = agg[:, :, 0]
    disp_r = agg_r.argmin(axis=2)
    xs = np.arange(W)[None, :].repeat(H, axis=0)
    x_right = xs - disp
    in_range = x_right >= 0
    dr = disp_r[np.arange(H)[:, None].repeat(W, axis=1), np.clip(x_right, 0, W - 1)]
    valid &= in_range & (np.abs(disp - dr) <= lr_max_diff)

    return DisparityMap(disp.astype(np.float64), valid, max_disparity)
