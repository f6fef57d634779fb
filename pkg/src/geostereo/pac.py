"""Standard and pixel-adaptive convolution with analytic gradients.

Both operators use the cross-correlation convention: tap ``(ky, kx)`` of a
``s x s`` kernel with dilation ``d`` reads the neighbour at offset
``((ky - s//2) * d, (kx - s//2) * d)``. Borders are zero padded and the
affinity to an out-of-image neighbour is 0, so spatial size is preserved.

The pixel-adaptive form multiplies each tap by a Gaussian affinity between
guidance vectors, ``K(fi, fj) = exp(-|fi - fj|^2 / 2)``.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .fields import FeatureMap, GradientField

FILTERBANK_MAGIC = b"GPFB1"
DEFAULT_DILATIONS = (4, 8)


@dataclass
class FilterBank:
    """Weights ``(out, in, s, s)`` and bias ``(out,)``."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64).reshape(-1)
        if self.weights.ndim != 4 or self.weights.shape[2] != self.weights.shape[3]:
            raise ContractError(f"weights must be (out, in, s, s), got {self.weights.shape}")
        if self.weights.shape[2] % 2 == 0:
            raise ContractError("kernel size must be odd")
        if self.bias.shape != (self.weights.shape[0],):
            raise ContractError("bias length must equal the number of output channels")
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias))):
            raise ContractError("filter entries must be finite")

    @property
    def out_channels(self):
        return self.weights.shape[0]

    @property
    def in_channels(self):
        return self.weights.shape[1]

    @property
    def size(self):
        return self.weights.shape[2]

    @classmethod
    def uniform(cls, size=3, channels=1):
        w = np.zeros((channels, channels, size, size))
        for c in range(channels):
            w[c, c] = 1.0 / size**2
        return cls(w, np.zeros(channels))

    @classmethod
    def identity(cls, size=3, channels=1):
        w = np.zeros((channels, channels, size, size))
        for c in range(channels):
            w[c, c, size // 2, size // 2] = 1.0
        return cls(w, np.zeros(channels))

    def copy(self):
        return FilterBank(self.weights.copy(), self.bias.copy())

    def to_bytes(self):
        """Serialise as ``GPFB1`` + ``<III`` dims + little-endian float64 payload."""
        c_out, c_in, s, _ = self.weights.shape
        return (
            FILTERBANK_MAGIC
            + struct.pack("<III", c_out, c_in, s)
            + self.weights.astype("<f8").tobytes()
            + self.bias.astype("<f8").tobytes()
        )

    @classmethod
    def from_bytes(cls, data):
        data = bytes(data)
        n = len(FILTERBANK_MAGIC)
        if data[:n] != FILTERBANK_MAGIC:
            raise ContractError("not a filter bank record (bad magic)")
        if len(data) < n + 12:
            raise ContractError("truncated filter bank header")
        c_out, c_in, s = struct.unpack_from("<III", data, n)
        n_w = c_out * c_in * s * s
        expected = n + 12 + 8 * (n_w + c_out)
        if len(data) != expected:
            raise ContractError(f"filter bank payload is {len(data)} bytes, expected {expected}")
        w = np.frombuffer(data, dtype="<f8", count=n_w, offset=n + 12).reshape(c_out, c_in, s, s)
        b = np.frombuffer(data, dtype="<f8", count=c_out, offset=n + 12 + 8 * n_w)
        return cls(w.astype(np.float64), b.astype(np.float64))


@dataclass
class PacLayerConfig:
    kernel_size: int = 3
    dilation: int = 1
    in_channels: int = 1
    out_channels: int = 1
    normalize: bool = False

    def __post_init__(self):
        if self.kernel_size % 2 == 0 or self.kernel_size < 1:
            raise ContractError("kernel_size must be a positive odd integer")
        if self.dilation < 1:
            raise ContractError("dilation must be >= 1")


@dataclass
class GradSmoothParams:
    """Two PAC layers applied in sequence to each gradient component."""

    layer1: tuple
    layer2: tuple
    learnable: bool = False

    def __post_init__(self):
        (cfg1, fb1), (cfg2, fb2) = self.layer1, self.layer2
        for cfg, fb in ((cfg1, fb1), (cfg2, fb2)):
            if (fb.out_channels, fb.in_channels, fb.size) != (
                cfg.out_channels, cfg.in_channels, cfg.kernel_size,
            ):
                raise ContractError("filter bank shape does not match its layer config")
        if cfg1.out_channels != cfg2.in_channels:
            raise ContractError("layer1 output channels must equal layer2 input channels")
        if cfg1.in_channels != 1 or cfg2.out_channels != 1:
            raise ContractError("GradSmooth maps one gradient channel to one channel")

    @classmethod
    def default(cls, dilations=DEFAULT_DILATIONS, size=3, normalize=False, learnable=False):
        """Uniform ``1/s^2`` weights, zero bias, dilations 4 then 8."""
        return cls(
            *[(PacLayerConfig(size, d, normalize=normalize), FilterBank.uniform(size)) for d in dilations],
            learnable=learnable,
        )

    @classmethod
    def identity(cls, dilations=DEFAULT_DILATIONS, size=3):
        return cls(*[(PacLayerConfig(size, d), FilterBank.identity(size)) for d in dilations])

    @property
    def layers(self):
        return (self.layer1, self.layer2)

    def with_filters(self, fb1, fb2):
        return GradSmoothParams((self.layer1[0], fb1), (self.layer2[0], fb2), self.learnable)


def gaussian_affinity(fi, fj):
    """``exp(-|fi - fj|^2 / 2)`` for two feature vectors."""
    fi = np.asarray(fi, dtype=np.float64)
    fj = np.asarray(fj, dtype=np.float64)
    if fi.shape != fj.shape:
        raise ContractError(f"feature vectors differ in shape: {fi.shape} vs {fj.shape}")
    diff = fi - fj
    return float(np.exp(-0.5 * np.dot(diff.ravel(), diff.ravel())))


def _offsets(size, dilation):
    r = size // 2
    return [((ky - r) * dilation, (kx - r) * dilation) for ky in range(size) for kx in range(size)]


def _shift(a, oy, ox):
    """``out[..., y, x] = a[..., y + oy, x + ox]``, zero outside the image."""
    out = np.zeros_like(a)
    h, w = a.shape[-2:]
    ys, ye = max(0, -oy), min(h, h - oy)
    xs, xe = max(0, -ox), min(w, w - ox)
    if ys < ye and xs < xe:
        out[..., ys:ye, xs:xe] = a[..., ys + oy : ye + oy, xs + ox : xe + ox]
    return out


def _unshift_add(target, g, oy, ox):
    """Adjoint of :func:`_shift`: scatter-add ``g`` back to source positions."""
    h, w = g.shape[-2:]
    ys, ye = max(0, -oy), min(h, h - oy)
    xs, xe = max(0, -ox), min(w, w - ox)
    if ys < ye and xs < xe:
        target[..., ys + oy : ye + oy, xs + ox : xe + ox] += g[..., ys:ye, xs:xe]


def _as_array(v):
    return v.values if isinstance(v, FeatureMap) else np.asarray(v, dtype=np.float64)


def conv_forward(v, filt, dilation=1):
    """Zero-padded dilated cross-correlation plus bias."""
    x = _as_array(v)
    if x.ndim == 2:
        x = x[None]
    if x.shape[0] != filt.in_channels:
        raise ContractError(f"input has {x.shape[0]} channels, filter expects {filt.in_channels}")
    out = np.zeros((filt.out_channels,) + x.shape[1:])
    w = filt.weights.reshape(filt.out_channels, filt.in_channels, -1)
    for k, (oy, ox) in enumerate(_offsets(filt.size, dilation)):
        out += np.einsum("oc,chw->ohw", w[:, :, k], _shift(x, oy, ox))
    out += filt.bias[:, None, None]
    return FeatureMap(out)


@dataclass
class PacCache:
    v: np.ndarray
    f: np.ndarray
    weights: np.ndarray
    dilation: int
    normalize: bool
    affinity: np.ndarray  # (taps, H, W), raw Gaussian affinity, 0 off-image
    inside: np.ndarray  # (taps, H, W) bool
    kernel: np.ndarray = field(repr=False)  # affinity actually applied (normalised or not)


def pac_affinity(f, size, dilation):
    """Per-tap Gaussian affinities ``(taps, H, W)`` and the in-image mask."""
    f = _as_array(f)
    h, w = f.shape[1:]
    ones = np.ones((h, w))
    taps = _offsets(size, dilation)
    aff = np.empty((len(taps), h, w))
    inside = np.empty((len(taps), h, w), dtype=bool)
    for k, (oy, ox) in enumerate(taps):
        inside[k] = _shift(ones, oy, ox) > 0
        diff = f - _shift(f, oy, ox)
        aff[k] = np.where(inside[k], np.exp(-0.5 * np.sum(diff * diff, axis=0)), 0.0)
    return aff, inside


def pac_forward(v, f, filt, dilation=1, normalize=False):
    """Pixel-adaptive convolution; returns ``(FeatureMap, PacCache)``.

    With ``normalize`` the affinities of each pixel are divided by their sum
    over the stencil before weighting.
    """
    x = _as_array(v)
    if x.ndim == 2:
        x = x[None]
    g = _as_array(f)
    if g.ndim == 2:
        g = g[None]
    if x.shape[1:] != g.shape[1:]:
        raise ContractError(f"input {x.shape[1:]} and guidance {g.shape[1:]} differ in size")
    if x.shape[0] != filt.in_channels:
        raise ContractError(f"input has {x.shape[0]} channels, filter expects {filt.in_channels}")
    aff, inside = pac_affinity(g, filt.size, dilation)
    kern = aff / aff.sum(axis=0, keepdims=True) if normalize else aff
    w = filt.weights.reshape(filt.out_channels, filt.in_channels, -1)
    out = np.zeros((filt.out_channels,) + x.shape[1:])
    for k, (oy, ox) in enumerate(_offsets(filt.size, dilation)):
        out += kern[k] * np.einsum("oc,chw->ohw", w[:, :, k], _shift(x, oy, ox))
    out += filt.bias[:, None, None]
    cache = PacCache(x, g, filt.weights, dilation, normalize, aff, inside, kern)
    return FeatureMap(out), cache


def pac_backward(upstream, cache):
    """Gradients of ``sum(upstream * pac_forward(...))``.

    Returns ``(grad_v, grad_f, grad_weights, grad_bias)`` with the same
    shapes as the forward inputs.
    """
    gout = _as_array(upstream)
    if gout.ndim == 2:
        gout = gout[None]
    c_out, c_in, s, _ = cache.weights.shape
    if gout.shape != (c_out,) + cache.v.shape[1:]:
        raise ContractError(f"upstream shape {gout.shape} does not match the forward output")
    w = cache.weights.reshape(c_out, c_in, -1)
    taps = _offsets(s, cache.dilation)

    grad_v = np.zeros_like(cache.v)
    grad_w = np.zeros_like(w)
    grad_kern = np.empty_like(cache.kernel)
    for k, (oy, ox) in enumerate(taps):
        xs = _shift(cache.v, oy, ox)
        grad_w[:, :, k] = np.einsum("ohw,chw->oc", gout * cache.kernel[k], xs)
        _unshift_add(grad_v, np.einsum("oc,ohw->chw", w[:, :, k], gout * cache.kernel[k]), oy, ox)
        grad_kern[k] = np.sum(gout * np.einsum("oc,chw->ohw", w[:, :, k], xs), axis=0)

    if cache.normalize:
        # kern = aff / S  =>  d/daff_k = (g_k - sum_j g_j kern_j) / S
        total = cache.affinity.sum(axis=0)
        grad_aff = (grad_kern - np.sum(grad_kern * cache.kernel, axis=0)) / total
    else:
        grad_aff = grad_kern

    grad_f = np.zeros_like(cache.f)
    for k, (oy, ox) in enumerate(taps):
        diff = cache.f - _shift(cache.f, oy, ox)
        coef = np.where(cache.inside[k], grad_aff[k] * cache.affinity[k], 0.0)
        grad_f -= coef * diff
        _unshift_add(grad_f, coef * diff, oy, ox)

    grad_b = gout.sum(axis=(1, 2))
    return FeatureMap(grad_v), grad_f, grad_w.reshape(cache.weights.shape), grad_b


@dataclass
class GradSmoothCache:
    dx: list
    dy: list
    valid: np.ndarray


def _smooth_component(a, f, params):
    caches = []
    x = a[None]
    for cfg, fb in params.layers:
        out, cache = pac_forward(x, f, fb, cfg.dilation, cfg.normalize)
        caches.append(cache)
        x = out.values
    return x[0], caches


def gradsmooth_apply(g, f, params):
    """Filter ``dx`` and ``dy`` through both PAC layers with shared weights.

    The refined field keeps the input's validity mask.
    """
    fv = _as_array(f)
    if fv.shape[1:] != g.shape:
        raise ContractError(f"guidance {fv.shape[1:]} and gradient field {g.shape} differ in size")
    dx, cx = _smooth_component(g.dx, fv, params)
    dy, cy = _smooth_component(g.dy, fv, params)
    return GradientField(dx, dy, g.valid.copy()), GradSmoothCache(cx, cy, g.valid.copy())


def gradsmooth_backward(grad_dx, grad_dy, cache):
    """Back-propagate through :func:`gradsmooth_apply`.

    Returns ``(grad_in_dx, grad_in_dy, grad_f, [(grad_w, grad_b) per layer])``;
    filter gradients are summed over the two components.
    """
    grad_f = None
    layer_grads = [None, None]
    outs = []
    for upstream, caches in ((grad_dx, cache.dx), (grad_dy, cache.dy)):
        g = np.asarray(upstream, dtype=np.float64)[None]
        for i in (1, 0):
            gv, gf, gw, gb = pac_backward(g, caches[i])
            g = gv.values
            grad_f = gf if grad_f is None else grad_f + gf
            if layer_grads[i] is None:
                layer_grads[i] = (gw, gb)
            else:
                layer_grads[i] = (layer_grads[i][0] + gw, layer_grads[i][1] + gb)
        outs.append(g[0])
    return outs[0], outs[1], grad_f, layer_grads
