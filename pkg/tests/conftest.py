"""Independent reference implementations used as test oracles.

These are deliberately naive loops written straight from the defining
formulas; they share no code with the vectorised library paths.
"""

import math

import numpy as np
import pytest


def brute_conv(v, weights, bias, dilation, f=None, normalize=False):
    """Nested-loop (pixel-adaptive) convolution with zero padding."""
    c_in, h, w = v.shape
    c_out, _, s, _ = weights.shape
    r = s // 2
    out = np.zeros((c_out, h, w))
    for y in range(h):
        for x in range(w):
            ks = {}
            for ky in range(s):
                for kx in range(s):
                    yy, xx = y + (ky - r) * dilation, x + (kx - r) * dilation
                    if not (0 <= yy < h and 0 <= xx < w):
                        continue
                    k = 1.0
                    if f is not None:
                        k = math.exp(-0.5 * sum((f[c, y, x] - f[c, yy, xx]) ** 2 for c in range(f.shape[0])))
                    ks[(ky, kx, yy, xx)] = k
            norm = sum(ks.values()) if normalize else 1.0
            for o in range(c_out):
                acc = bias[o]
                for (ky, kx, yy, xx), k in ks.items():
                    for c in range(c_in):
                        acc += k / norm * weights[o, c, ky, kx] * v[c, yy, xx]
                out[o, y, x] = acc
    return out


def sigmoid(z):
    return 1.0 / (1.0 + math.exp(-z)) if z >= 0 else math.exp(z) / (1.0 + math.exp(z))


def brute_soft_occlusion(vals, valid, alpha, d0, window):
    h, w = vals.shape
    out = np.full((h, w), sigmoid(-alpha * (1 + d0)))
    for y in range(h):
        for x in range(w):
            if not valid[y, x]:
                continue
            cands = [
                sigmoid(alpha * ((vals[y, xp] - vals[y, x]) - (xp - x) - d0))
                for xp in range(x + 1, min(w, x + window + 1))
                if valid[y, xp]
            ]
            if cands:
                out[y, x] = max(cands)
    return out


def brute_hard_occlusion(vals, valid, t):
    h, w = vals.shape
    out = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            if valid[y, x] and any(
                valid[y, xp] and (vals[y, xp] - vals[y, x]) - (xp - x) >= t for xp in range(x + 1, w)
            ):
                out[y, x] = 1.0
    return out


def central_difference(fn, x, h=1e-5):
    grad = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        orig = x[i]
        x[i] = orig + h
        fp = fn()
        x[i] = orig - h
        fm = fn()
        x[i] = orig
        grad[i] = (fp - fm) / (2 * h)
    return grad


def rel_err(a, n, floor=1e-6):
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
