"""Synthetic piecewise-planar scenes and field-level disparity refinement.

The refinement treats the disparity map itself (and optionally the two
GradSmooth filter banks) as free variables and runs gradient descent on
:func:`geostereo.loss.total_loss` against sparse ground truth.
"""

import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, OptimizationError
from .fields import DisparityMap, FeatureMap
from .loss import LossWeights, total_loss
from .occlusion import OcclusionConfig
from .pac import GradSmoothParams

logger = logging.getLogger(__name__)

MAX_HALVINGS = 10
WINDOW = 10


@dataclass
class Plane:
    """Axis-aligned rectangle ``[x0, x1) x [y0, y1)`` carrying ``D = a*x + b*y + c``."""

    rect: tuple
    coeffs: tuple
    color: tuple

    def disparity(self, xs, ys):
        a, b, c = self.coeffs
        return a * xs + b * ys + c


@dataclass
class SceneSpec:
    width: int
    height: int
    planes: list
    noise_sigma: float = 0.0  # std of additive colour noise, clipped to [0, 1]
    rng_seed: int = 0

    @classmethod
    def from_dict(cls, spec):
        try:
            planes = [
                Plane(tuple(p["rect"]), tuple(p["coeffs"]), tuple(p["color"])) for p in spec["planes"]
            ]
            return cls(
                int(spec["width"]), int(spec["height"]), planes,
                float(spec.get("noise_sigma", 0.0)), int(spec.get("rng_seed", 0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ContractError(f"malformed scene spec: {exc!r}") from None


def two_plane_spec(width=64, height=64, noise_sigma=0.0, rng_seed=0):
    """Slanted background with a fronto-parallel box in front of it."""
    return SceneSpec(width, height, [
        Plane((0, 0, width, height), (0.05, 0.03, 4.0), (0.2, 0.4, 0.8)),
        Plane((width // 4, height // 4, 3 * width // 4, 3 * height // 4), (0.0, 0.0, 14.0), (0.9, 0.5, 0.1)),
    ], noise_sigma, rng_seed)


def synth_scene(spec):
    """Render a colour image and GT disparity; later planes overwrite earlier ones."""
    h, w = spec.height, spec.width
    if h < 1 or w < 1:
        raise ContractError("scene must be at least 1x1")
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    disp = np.full((h, w), np.nan)
    image = np.zeros((3, h, w))
    for i, plane in enumerate(spec.planes):
        x0, y0, x1, y1 = (int(v) for v in plane.rect)
        if not (0 <= x0 < x1 <= w and 0 <= y0 < y1 <= h):
            raise ContractError(f"plane {i} rectangle {plane.rect} lies outside the {w}x{h} image")
        if len(plane.color) != 3 or not all(0 <= c <= 1 for c in plane.color):
            raise ContractError(f"plane {i} colour must be three values in [0, 1]")
        win = (slice(y0, y1), slice(x0, x1))
        pd = plane.disparity(xs[win], ys[win])
        if np.any(pd < 0):
            raise ContractError(f"plane {i} has negative disparity over its rectangle")
        behind = disp[win]
        covered = ~np.isnan(behind)
        if np.any(pd[covered] <= behind[covered]):
            raise ContractError(f"plane {i} is not in front of the planes it covers")
        disp[win] = pd
        image[(slice(None),) + win] = np.asarray(plane.color, dtype=np.float64)[:, None, None]
    if spec.noise_sigma > 0:
        rng = np.random.default_rng(spec.rng_seed)
        image = np.clip(image + rng.normal(0.0, spec.noise_sigma, image.shape), 0.0, 1.0)
    valid = ~np.isnan(disp)
    return FeatureMap(image), DisparityMap(np.where(valid, disp, np.inf), valid)


def sparsify(d_gt, fraction, seed=0):
    """Keep a uniformly random ``fraction`` of the valid GT pixels."""
    if not 0 < fraction <= 1:
        raise ContractError("gt fraction must lie in (0, 1]")
    if fraction == 1:
        return DisparityMap(d_gt.values.copy(), d_gt.valid.copy())
    rng = np.random.default_rng(seed)
    keep = d_gt.valid & (rng.random(d_gt.shape) < fraction)
    return DisparityMap(d_gt.values.copy(), keep)


@dataclass
class RefineConfig:
    step_size: float = 0.05
    iterations: int = 500
    optimize_filters: bool = False
    gt_fraction: float = 1.0
    rng_seed: int = 0
    warm_iterations: int = 0  # leading iterations run with lambda1 = lambda2 = 0
    self_supervised: bool = True
    params: GradSmoothParams = field(default_factory=GradSmoothParams.default)
    occlusion: OcclusionConfig = field(default_factory=OcclusionConfig)

    def __post_init__(self):
        if self.step_size <= 0:
            raise ContractError("step_size must be positive")
        if self.iterations < 1:
            raise ContractError("iterations must be >= 1")
        if not 0 < self.gt_fraction <= 1:
            raise ContractError("gt_fraction must lie in (0, 1]")


def _evaluate(values, d_init, d_gt, guidance, params, cfg, weights):
    d = DisparityMap(values, d_init.valid)
    return total_loss(d, d_gt, guidance, params, cfg.occlusion, weights, cfg.self_supervised)


def refine_disparity(d_init, d_gt_sparse, guidance, w=None, cfg=None):
    """Gradient descent on the composite loss; returns ``(DisparityMap, history)``.

    The step is applied to the gradient scaled by the pixel count, so that
    ``step_size`` is a per-pixel rate independent of resolution. A step is
    accepted when the total loss does not exceed the largest total among the
    last ten accepted iterates; otherwise the step size is halved for the rest
    of the run. More than ten halvings raise :class:`OptimizationError`.

    ``history`` holds one :class:`LossBreakdown` per accepted iterate,
    starting with the initial one. Negative disparities are clipped to 0.
    """
    w = w or LossWeights()
    cfg = cfg or RefineConfig()
    if d_init.shape != d_gt_sparse.shape:
        raise ContractError("initial and ground-truth maps differ in shape")
    scale = float(d_init.valid.size)
    values = d_init.values.copy()
    params = cfg.params
    step = cfg.step_size
    halvings = 0
    zero = LossWeights(0.0, 0.0)

    phase_weights = zero if cfg.warm_iterations > 0 else w
    current = _evaluate(values, d_init, d_gt_sparse, guidance, params, cfg, phase_weights)
    history = [current]
    phase_start = 0
    for it in range(cfg.iterations):
        if it == cfg.warm_iterations and it > 0:
            phase_weights = w
            current = _evaluate(values, d_init, d_gt_sparse, guidance, params, cfg, w)
            history[-1] = current
            phase_start = len(history) - 1
        if not np.all(np.isfinite(current.grad_wrt_disparity)):
            raise OptimizationError(f"non-finite gradient at iteration {it}", history)
        while True:
            cand = np.where(
                d_init.valid,
                np.maximum(values - step * scale * current.grad_wrt_disparity, 0.0),
                values,
            )
            cand_params = params
            if cfg.optimize_filters:
                fbs = []
                for (_, fb), (gw, gb) in zip(params.layers, current.grad_wrt_filter_params):
                    fb = fb.copy()
                    fb.weights -= step * gw
                    fb.bias -= step * gb
                    fbs.append(fb)
                cand_params = params.with_filters(*fbs)
            trial = _evaluate(cand, d_init, d_gt_sparse, guidance, cand_params, cfg, phase_weights)
            recent = max(h.total for h in history[max(phase_start, len(history) - WINDOW):])
            if np.isfinite(trial.total) and trial.total <= recent:
                break
            halvings += 1
            if halvings > MAX_HALVINGS:
                raise OptimizationError(
                    f"loss kept increasing after {MAX_HALVINGS} step halvings (iteration {it})", history
                )
            step *= 0.5
            logger.debug("iteration %d: loss rose to %g, halving step to %g", it, trial.total, step)
        values, params, current = cand, cand_params, trial
        history.append(current)
    return DisparityMap(values, d_init.valid.copy()), history


def history_csv(history):
    """Loss history as CSV text with columns iteration, l_d, l_g, l_o, total."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["iteration", "l_d", "l_g", "l_o", "total"])
    for i, h in enumerate(history):
        writer.writerow([i, repr(h.l_d), repr(h.l_g), repr(h.l_o), repr(h.total)])
    return buf.getvalue()


def window_monotone(totals, window=WINDOW):
    """True when each total is no larger than the max of the preceding ``window``."""
    totals = list(totals)
    return all(totals[i] <= max(totals[max(0, i - window):i]) for i in range(1, len(totals)))
