"""2D field containers, spatial gradients and RGBXY guidance.

Arrays are stored row-major as ``(height, width)`` for scalar fields and
``(channels, height, width)`` for feature maps, always in float64.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ContractError, DegenerateInputError

DEFAULT_XY_SCALE = 0.5


@dataclass
class DisparityMap:
    """Disparity in pixels with a validity mask.

    Values at invalid pixels are kept as given (often ``+inf``) and must not
    be consumed; use :attr:`filled` for arithmetic.
    """

    values: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.values.ndim != 2 or self.values.shape != self.valid.shape:
            raise ContractError(
                f"values {self.values.shape} and valid {self.valid.shape} must be matching 2D arrays"
            )
        v = self.values[self.valid]
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise ContractError("valid disparities must be finite and non-negative")

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]

    @property
    def shape(self):
        return self.values.shape

    @property
    def filled(self):
        """Values with invalid pixels replaced by 0."""
        return np.where(self.valid, self.values, 0.0)

    def with_values(self, values):
        """Copy carrying new values on the same mask."""
        return DisparityMap(np.asarray(values, dtype=np.float64).copy(), self.valid.copy())


@dataclass
class FeatureMap:
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim == 2:
            self.values = self.values[None]
        if self.values.ndim != 3 or self.values.shape[0] < 1:
            raise ContractError(f"feature map must be (C, H, W), got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ContractError("feature map entries must be finite")

    @property
    def channels(self):
        return self.values.shape[0]

    @property
    def height(self):
        return self.values.shape[1]

    @property
    def width(self):
        return self.values.shape[2]

    @property
    def spatial_shape(self):
        return self.values.shape[1:]


@dataclass
class GradientField:
    """Horizontal and vertical disparity derivatives; zero where invalid."""

    dx: np.ndarray
    dy: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        self.dx = np.asarray(self.dx, dtype=np.float64)
        self.dy = np.asarray(self.dy, dtype=np.float64)
        self.valid = np.asarray(self.valid, dtype=bool)
        if not (self.dx.shape == self.dy.shape == self.valid.shape) or self.dx.ndim != 2:
            raise ContractError("dx, dy and valid must share one 2D shape")

    @property
    def shape(self):
        return self.dx.shape


@dataclass
class OcclusionMap:
    values: np.ndarray
    hard: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if np.any(self.values < 0) or np.any(self.values > 1):
            raise ContractError("occlusion values must lie in [0, 1]")
        if self.hard and not np.all((self.values == 0) | (self.values == 1)):
            raise ContractError("hard occlusion map must be {0, 1}-valued")


def make_disparity_map(values, invalid_marker=None):
    """Wrap a 2D array, marking non-finite, negative and marker entries invalid.

    >>> make_disparity_map([[1.0, np.inf], [0.0, -1.0]]).valid
    array([[ True, False],
           [ True, False]])
    """
    try:
        arr = np.array(values, dtype=np.float64)
    except ValueError as exc:
        raise ContractError(f"disparity values must be a rectangular array: {exc}") from None
    if arr.ndim != 2:
        raise ContractError(f"disparity values must be 2D, got shape {arr.shape}")
    valid = np.isfinite(arr)
    if invalid_marker is not None:
        valid &= arr != invalid_marker
    valid &= ~(arr < 0)
    return DisparityMap(arr, valid)


def _diff(a, axis):
    """Central differences inside, one-sided at the two ends of ``axis``."""
    a = np.moveaxis(a, axis, -1)
    out = np.empty_like(a)
    out[..., 1:-1] = 0.5 * (a[..., 2:] - a[..., :-2])
    out[..., 0] = a[..., 1] - a[..., 0]
    out[..., -1] = a[..., -1] - a[..., -2]
    return np.moveaxis(out, -1, axis)


def _diff_transpose(g, axis):
    g = np.moveaxis(g, axis, -1)
    out = np.zeros_like(g)
    out[..., 2:] += 0.5 * g[..., 1:-1]
    out[..., :-2] -= 0.5 * g[..., 1:-1]
    out[..., 1] += g[..., 0]
    out[..., 0] -= g[..., 0]
    out[..., -1] += g[..., -1]
    out[..., -2] -= g[..., -1]
    return np.moveaxis(out, -1, axis)


def _stencil_valid(valid, axis):
    v = np.moveaxis(valid, axis, -1)
    out = np.empty_like(v)
    out[..., 1:-1] = v[..., :-2] & v[..., 1:-1] & v[..., 2:]
    out[..., 0] = v[..., 0] & v[..., 1]
    out[..., -1] = v[..., -1] & v[..., -2]
    return np.moveaxis(out, -1, axis)


def spatial_gradient(d):
    """Horizontal and vertical derivatives of a disparity map.

    A gradient pixel is valid only if every pixel of both its x and y
    stencils (centre included) is valid; invalid entries are set to 0 so
    downstream filters never see NaN or inf.
    """
    if d.height < 2 or d.width < 2:
        raise DegenerateInputError(f"gradient needs at least 2x2 pixels, got {d.shape}")
    vals = d.filled
    valid = _stencil_valid(d.valid, 1) & _stencil_valid(d.valid, 0)
    dx = np.where(valid, _diff(vals, 1), 0.0)
    dy = np.where(valid, _diff(vals, 0), 0.0)
    return GradientField(dx, dy, valid)


def spatial_gradient_backward(grad_dx, grad_dy, d):
    """Adjoint of :func:`spatial_gradient` for the map ``d`` it was applied to."""
    valid = _stencil_valid(d.valid, 1) & _stencil_valid(d.valid, 0)
    g = _diff_transpose(np.where(valid, grad_dx, 0.0), 1)
    g += _diff_transpose(np.where(valid, grad_dy, 0.0), 0)
    return np.where(d.valid, g, 0.0)


def rgbxy_guidance(image, xy_scale=DEFAULT_XY_SCALE):
    """Stack RGB with normalised pixel coordinates into 5-channel guidance.

    Colours are expected in [0, 1] (uint8 input is divided by 255). The XY
    channels run from 0 to ``xy_scale`` across the image.
    """
    raw = image.values if isinstance(image, FeatureMap) else np.asarray(image)
    if raw.ndim != 3 or raw.shape[0] != 3:
        raise ContractError(f"rgbxy guidance needs a 3-channel image, got shape {raw.shape}")
    if xy_scale <= 0:
        raise ContractError("xy_scale must be positive")
    rgb = raw / 255.0 if raw.dtype == np.uint8 else np.asarray(raw, dtype=np.float64)
    if rgb.min() < 0 or rgb.max() > 1:
        raise ContractError("RGB values must be normalised to [0, 1]")
    _, h, w = rgb.shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    xs *= xy_scale / max(w - 1, 1)
    ys *= xy_scale / max(h - 1, 1)
    return FeatureMap(np.concatenate([rgb, xs[None], ys[None]]))


def guidance_edges(guidance, min_affinity=0.9):
    """Pixels whose 4-neighbourhood crosses a guidance edge.

    A pixel is flagged when the Gaussian affinity ``exp(-|fi - fj|^2 / 2)`` to
    any horizontal or vertical neighbour falls below ``min_affinity``.
    """
    f = guidance.values if isinstance(guidance, FeatureMap) else np.asarray(guidance, dtype=np.float64)
    _, h, w = f.shape
    edge = np.zeros((h, w), dtype=bool)
    cut = -2.0 * np.log(min_affinity)
    dist_x = np.sum((f[:, :, 1:] - f[:, :, :-1]) ** 2, axis=0) > cut
    dist_y = np.sum((f[:, 1:, :] - f[:, :-1, :]) ** 2, axis=0) > cut
    edge[:, 1:] |= dist_x
    edge[:, :-1] |= dist_x
    edge[1:, :] |= dist_y
    edge[:-1, :] |= dist_y
    return edge


def _diff_matrix(n):
    """Sparse matrix of the 1D gradient stencil used by :func:`spatial_gradient`."""
    i = np.arange(1, n - 1)
    rows = np.concatenate([i, i, [0, 0, n - 1, n - 1]])
    cols = np.concatenate([i - 1, i + 1, [0, 1, n - 2, n - 1]])
    vals = np.concatenate([np.full(n - 2, -0.5), np.full(n - 2, 0.5), [-1.0, 1.0, -1.0, 1.0]])
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def integrate_gradients(g, anchor, anchor_weight=1e-6):
    """Least-squares disparity whose gradients best match ``g``.

    Solves ``min |Gx D - dx|^2 + |Gy D - dy|^2 + w |D - anchor|^2`` over
    the valid gradient pixels; the weak anchor fixes the free constant.
    """
    h, w = g.shape
    gx = sp.kron(sp.identity(h), _diff_matrix(w))
    gy = sp.kron(_diff_matrix(h), sp.identity(w))
    keep = sp.diags(g.valid.ravel().astype(np.float64))
    a = sp.vstack([keep @ gx, keep @ gy, np.sqrt(anchor_weight) * sp.identity(h * w)]).tocsr()
    anchor_vals = anchor.filled.ravel() if isinstance(anchor, DisparityMap) else np.ravel(anchor)
    b = np.concatenate([
        np.where(g.valid, g.dx, 0.0).ravel(),
        np.where(g.valid, g.dy, 0.0).ravel(),
        np.sqrt(anchor_weight) * anchor_vals,
    ])
    sol = spla.lsqr(a, b, atol=1e-12, btol=1e-12, iter_lim=20 * h * w)[0]
    return sol.reshape(h, w)
