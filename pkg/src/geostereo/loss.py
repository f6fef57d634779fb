"""Smooth-L1 losses and the composite disparity/gradient/occlusion objective."""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DegenerateInputError
from .fields import GradientField, guidance_edges, spatial_gradient, spatial_gradient_backward
from .occlusion import (
    OcclusionConfig,
    default_window,
    occlusion_target,
    soft_occlusion,
    soft_occlusion_backward,
)
from .pac import gradsmooth_apply, gradsmooth_backward


@dataclass
class LossWeights:
    lambda1: float = 1.0
    lambda2: float = 1.0

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ContractError("loss weights must be non-negative")


@dataclass
class LossBreakdown:
    l_d: float
    l_g: float
    l_o: float
    total: float
    grad_wrt_disparity: np.ndarray = field(repr=False)
    grad_wrt_filter_params: list = field(repr=False)
    # unweighted per-term disparity gradients, keyed "d", "g", "o"
    components: dict = field(repr=False, default_factory=dict)

    def to_dict(self):
        return {"l_d": self.l_d, "l_g": self.l_g, "l_o": self.l_o, "total": self.total}

    def to_json(self):
        return json.dumps(self.to_dict())


def smooth_l1(pred, target, mask):
    """Mean smooth-L1 (beta = 1) over ``mask`` and its gradient w.r.t. ``pred``.

    Entries outside the mask may hold anything, including NaN.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if not (pred.shape == target.shape == mask.shape):
        raise ContractError(f"shape mismatch: {pred.shape}, {target.shape}, {mask.shape}")
    n = int(mask.sum())
    if n == 0:
        raise DegenerateInputError("smooth_l1 mask selects no pixels")
    e = np.where(mask, pred - target, 0.0)
    a = np.abs(e)
    quad = a < 1.0
    rho = np.where(quad, 0.5 * e * e, a - 0.5)
    grad = np.where(quad, e, np.sign(e)) / n
    return float(np.sum(rho[mask]) / n), np.where(mask, grad, 0.0)


def _masked_smooth_l1(pred, target, mask):
    # empty masks contribute nothing (e.g. a GT too sparse for any gradient stencil)
    if not np.any(mask):
        return 0.0, np.zeros(np.shape(pred))
    return smooth_l1(pred, target, mask)


def total_loss(d, d_gt, guidance, params, occ_cfg=None, w=None, self_supervised=False,
               edge_affinity=0.9, gradients=True):
    """Composite loss ``L_D + lambda1 * L_G + lambda2 * L_O`` with gradients.

    ``L_G`` compares the GradSmooth-refined gradients of ``d`` with the
    gradients of ``d_gt``. With ``self_supervised`` pixels whose GT gradient is
    unavailable use the raw gradient of ``d`` as target instead, so the term
    penalises ``refined - raw`` there (a smoothness prior for sparse GT). In
    that mode gradients whose stencil crosses a guidance edge (see
    :func:`~geostereo.fields.guidance_edges`) are dropped from both the filter
    input and the loss, since a disparity step is a spike no smoother keeps.

    ``L_O`` compares the soft occlusion of ``d`` with that of ``d_gt``; both
    use one scan window derived from the larger of the two maps.

    With ``gradients=False`` only the loss values are computed and the
    gradient fields of the result are ``None``.
    """
    occ_cfg = occ_cfg or OcclusionConfig()
    w = w or LossWeights()
    if d.shape != d_gt.shape:
        raise ContractError(f"prediction {d.shape} and ground truth {d_gt.shape} differ")
    mask_d = d.valid & d_gt.valid
    if not mask_d.any():
        raise DegenerateInputError("prediction and ground truth share no valid pixels")

    l_d, grad_d = smooth_l1(d.filled, d_gt.filled, mask_d)

    g = spatial_gradient(d)
    g_gt = spatial_gradient(d_gt)
    if self_supervised:
        keep = g.valid & ~guidance_edges(guidance, edge_affinity)
        g = GradientField(np.where(keep, g.dx, 0.0), np.where(keep, g.dy, 0.0), keep)
    refined, cache = gradsmooth_apply(g, guidance, params)
    if self_supervised:
        mask_g = g.valid
        tx = np.where(g_gt.valid, g_gt.dx, g.dx)
        ty = np.where(g_gt.valid, g_gt.dy, g.dy)
    else:
        mask_g = g.valid & g_gt.valid
        tx, ty = g_gt.dx, g_gt.dy
    lx, gx = _masked_smooth_l1(refined.dx, tx, mask_g)
    ly, gy = _masked_smooth_l1(refined.dy, ty, mask_g)
    l_g = lx + ly

    cfg = OcclusionConfig(occ_cfg.alpha, occ_cfg.d0, occ_cfg.max_scan or default_window(d, d_gt))
    occ, occ_cache = soft_occlusion(d, cfg)
    target = occlusion_target(d_gt, cfg)
    l_o, g_occ = _masked_smooth_l1(occ.values, target.values, mask_d)
    total = l_d + w.lambda1 * l_g + w.lambda2 * l_o
    if not gradients:
        return LossBreakdown(l_d, l_g, l_o, total, None, None, {})

    in_dx, in_dy, _, filter_grads = gradsmooth_backward(gx, gy, cache)
    if self_supervised:
        # target is the raw gradient itself where no GT gradient exists
        own = mask_g & ~g_gt.valid
        in_dx = in_dx - np.where(own, gx, 0.0)
        in_dy = in_dy - np.where(own, gy, 0.0)
        in_dx = np.where(g.valid, in_dx, 0.0)
        in_dy = np.where(g.valid, in_dy, 0.0)
    grad_g = spatial_gradient_backward(in_dx, in_dy, d)
    grad_o = soft_occlusion_backward(g_occ, d, cfg, occ_cache)

    grad = grad_d + w.lambda1 * grad_g + w.lambda2 * grad_o
    grad = np.where(d.valid, grad, 0.0)
    filter_grads = [(w.lambda1 * gw, w.lambda1 * gb) for gw, gb in filter_grads]
    return LossBreakdown(
        l_d, l_g, l_o, total, grad, filter_grads,
        {"d": grad_d, "g": grad_g, "o": np.where(d.valid, grad_o, 0.0)},
    )
