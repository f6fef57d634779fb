"""Occlusion maps derived from a left-reference disparity map.

A pixel ``x`` is hidden from the right view when some pixel ``x' > x`` in
the same row has a disparity that exceeds its own by at least ``x' - x``.
The soft map relaxes this test with a steep sigmoid::

    O(x, y) = max_{x' > x} sigmoid(alpha * (D(x', y) - D(x, y) - (x' - x) - d0))
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import ContractError, DegenerateInputError
from .fields import DisparityMap, OcclusionMap

DEFAULT_ALPHA = 3.0
DEFAULT_D0 = 0.5


@dataclass
class OcclusionConfig:
    alpha: float = DEFAULT_ALPHA
    d0: float = DEFAULT_D0
    max_scan: int = None  # None -> ceil(max valid disparity) + 2

    def __post_init__(self):
        if self.alpha <= 0:
            raise ContractError("alpha must be positive")
        if self.max_scan is not None and self.max_scan < 1:
            raise ContractError("max_scan must be >= 1")

    def window(self, d):
        if self.max_scan is not None:
            return int(self.max_scan)
        return default_window(d)

    def floor_value(self):
        """Value assigned to pixels without any candidate to their right."""
        return float(expit(-self.alpha * (1.0 + self.d0)))


def default_window(*maps):
    dmax = max(float(m.values[m.valid].max()) if m.valid.any() else 0.0 for m in maps)
    return int(math.ceil(dmax)) + 2


@dataclass
class ArgmaxCache:
    """Winning offset per pixel (0 = no candidate) and its sigmoid argument."""

    offset: np.ndarray
    argument: np.ndarray
    alpha: float

    @property
    def shape(self):
        return self.offset.shape


def _candidate_arguments(d, cfg):
    """Yield ``(offset, argument, usable)`` for every scan offset."""
    vals = d.filled
    w = d.width
    for k in range(1, min(cfg.window(d), w - 1) + 1):
        arg = np.full(d.shape, -np.inf)
        usable = np.zeros(d.shape, dtype=bool)
        usable[:, : w - k] = d.valid[:, k:] & d.valid[:, : w - k]
        delta = vals[:, k:] - vals[:, : w - k]
        arg[:, : w - k] = np.where(usable[:, : w - k], cfg.alpha * (delta - k - cfg.d0), -np.inf)
        yield k, arg, usable


def soft_occlusion(d, cfg=None):
    """Sigmoid occlusion map and the argmax cache needed for backprop.

    Ties between candidates go to the nearest one. Invalid pixels are
    reported with the floor value and should be masked by the caller.
    """
    cfg = cfg or OcclusionConfig()
    if not d.valid.any():
        raise DegenerateInputError("disparity map has no valid pixels")
    best = np.full(d.shape, -np.inf)
    offset = np.zeros(d.shape, dtype=np.int64)
    for k, arg, usable in _candidate_arguments(d, cfg):
        better = usable & (arg > best)
        best[better] = arg[better]
        offset[better] = k
    found = offset > 0
    values = np.where(found, expit(np.where(found, best, 0.0)), cfg.floor_value())
    argument = np.where(found, best, -cfg.alpha * (1.0 + cfg.d0))
    return OcclusionMap(values, hard=False), ArgmaxCache(offset, argument, cfg.alpha)


def soft_occlusion_backward(upstream, d, cfg, cache):
    """Subgradient of ``sum(upstream * O)`` with respect to the disparities.

    Only the cached winning candidate of each pixel receives gradient.
    """
    g = np.asarray(upstream, dtype=np.float64)
    if g.shape != d.shape or cache.shape != d.shape:
        raise ContractError("upstream, disparity and cache shapes must agree")
    if cache.alpha != (cfg or OcclusionConfig()).alpha:
        raise ContractError("cache was produced with a different alpha")
    found = cache.offset > 0
    s = expit(cache.argument)
    coef = np.where(found, g * cache.alpha * s * (1.0 - s), 0.0)
    grad = -coef
    ys, xs = np.nonzero(found)
    np.add.at(grad, (ys, xs + cache.offset[ys, xs]), coef[ys, xs])
    return grad


def hard_occlusion_oracle(d, threshold=0.0):
    """Binary occlusion scanning the full row to the right (no window).

    ``D(x') - x' >= D(x) - x + t`` for some valid ``x' > x`` is tested with a
    running suffix maximum of ``D(x') - x'``, which is exact.
    """
    h, w = d.shape
    shifted = np.where(d.valid, d.filled - np.arange(w)[None, :], -np.inf)
    suffix = np.maximum.accumulate(shifted[:, ::-1], axis=1)[:, ::-1]
    right_max = np.full((h, w), -np.inf)
    right_max[:, :-1] = suffix[:, 1:]
    occluded = d.valid & (right_max >= shifted + threshold)
    return OcclusionMap(occluded.astype(np.float64), hard=True)


def occlusion_target(d_gt, cfg=None):
    """Occlusion target from ground-truth disparity (the soft map of the GT)."""
    return soft_occlusion(d_gt, cfg)[0]


def right_view_occlusion(d_right, cfg=None):
    """Occlusion for a right-reference map via mirroring."""
    mirrored = DisparityMap(d_right.values[:, ::-1].copy(), d_right.valid[:, ::-1].copy())
    occ, _ = soft_occlusion(mirrored, cfg)
    return OcclusionMap(occ.values[:, ::-1].copy(), hard=False)
