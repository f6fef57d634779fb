"""Central finite-difference checks of every analytic backward pass.

Each check builds a random instance, forms a scalar objective, and compares
the analytic gradient entrywise with ``(f(x + h) - f(x - h)) / 2h``. For
the occlusion max, entries whose perturbation changes any winning candidate
are not differentiable there and are skipped.
"""

from dataclasses import dataclass

import numpy as np

from .fields import DisparityMap, FeatureMap
from .loss import LossWeights, smooth_l1, total_loss
from .occlusion import OcclusionConfig, soft_occlusion, soft_occlusion_backward
from .pac import FilterBank, GradSmoothParams, PacLayerConfig, pac_backward, pac_forward

STEP = 1e-5
TOLERANCE = 1e-4
# denominators below this are treated as this; keeps near-zero partials from
# turning rounding noise into huge relative errors
ERROR_FLOOR = 1e-6

CHECKS = ("pac", "occlusion", "smooth_l1", "total_loss")


@dataclass
class CheckResult:
    name: str
    seed: int
    max_rel_error: float
    n_checked: int
    n_skipped: int
    tolerance: float = TOLERANCE

    @property
    def passed(self):
        return self.n_checked > 0 and self.max_rel_error < self.tolerance

    def to_dict(self):
        return {
            "check": self.name, "seed": self.seed, "max_rel_error": self.max_rel_error,
            "n_checked": self.n_checked, "n_skipped": self.n_skipped, "passed": self.passed,
        }


def relative_error(analytic, numeric, floor=ERROR_FLOOR):
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def numerical_gradient(fn, x, h=STEP, entries=None):
    """Central differences of scalar ``fn`` w.r.t. array ``x`` (modified in place, restored).

    ``fn`` may return ``value`` or ``(value, aux)``; the aux objects of the
    plus and minus evaluations are returned per entry for stability checks.
    """
    grad = np.zeros_like(x)
    aux = {}
    idx = np.ndindex(x.shape) if entries is None else entries
    for i in idx:
        orig = x[i]
        x[i] = orig + h
        fp = fn()
        x[i] = orig - h
        fm = fn()
        x[i] = orig
        if isinstance(fp, tuple):
            (fp, ap), (fm, am) = fp, fm
            aux[i] = (ap, am)
        grad[i] = (fp - fm) / (2 * h)
    return grad, aux


def _result(name, seed, analytic, numeric, mask=None):
    err = relative_error(analytic, numeric)
    if mask is not None:
        skipped = int(np.count_nonzero(~mask))
        err = err[mask]
    else:
        skipped = 0
    return CheckResult(name, seed, float(err.max()) if err.size else np.inf, int(err.size), skipped)


def check_pac(seed, corrupt=False):
    """PAC forward/backward on a random instance (size 9, dilation from {1, 4, 8})."""
    rng = np.random.default_rng(seed)
    dilation = int(rng.choice([1, 4, 8]))
    normalize = bool(rng.integers(2))
    h = w = 9
    v = rng.uniform(-1, 1, (1, h, w))
    f = rng.uniform(-1, 1, (3, h, w))
    weights = rng.uniform(-1, 1, (1, 1, 3, 3))
    bias = rng.uniform(-1, 1, 1)
    up = rng.uniform(-1, 1, (1, h, w))

    def objective():
        out, _ = pac_forward(v, f, FilterBank(weights, bias), dilation, normalize)
        return float(np.sum(up * out.values))

    _, cache = pac_forward(v, f, FilterBank(weights, bias), dilation, normalize)
    gv, gf, gw, gb = pac_backward(up, cache)
    analytic = np.concatenate([gv.values.ravel(), gf.ravel(), gw.ravel(), gb.ravel()])
    if corrupt:
        analytic = analytic * 1.01
    numeric = np.concatenate([numerical_gradient(objective, a)[0].ravel() for a in (v, f, weights, bias)])
    return _result("pac", seed, analytic, numeric)


def _random_row_disparity(rng, h, w):
    d = rng.uniform(0, 6, (h, w))
    # a few foreground steps so occlusion candidates actually win
    for y in range(h):
        x0 = rng.integers(2, w - 2)
        d[y, x0:] += rng.uniform(2, 6)
    return d


def check_occlusion(seed, corrupt=False):
    rng = np.random.default_rng(seed)
    h, w = int(rng.integers(1, 4)), int(rng.integers(9, 17))
    vals = _random_row_disparity(rng, h, w)
    valid = rng.random((h, w)) > 0.1
    cfg = OcclusionConfig(max_scan=int(np.ceil(vals.max())) + 2)
    up = rng.uniform(-1, 1, (h, w))

    def objective():
        occ, cache = soft_occlusion(DisparityMap(vals, valid), cfg)
        return float(np.sum(up * occ.values)), cache.offset.copy()

    d = DisparityMap(vals, valid)
    _, base = objective()
    _, cache = soft_occlusion(d, cfg)
    analytic = soft_occlusion_backward(up, d, cfg, cache)
    if corrupt:
        analytic = analytic * 1.01
    numeric, aux = numerical_gradient(objective, vals)
    stable = np.array([
        valid[i] and np.array_equal(aux[i][0], base) and np.array_equal(aux[i][1], base)
        for i in np.ndindex(vals.shape)
    ]).reshape(vals.shape)
    return _result("occlusion", seed, analytic, numeric, stable)


def check_smooth_l1(seed, corrupt=False):
    rng = np.random.default_rng(seed)
    h, w = rng.integers(9, 17, size=2)
    target = rng.uniform(-2, 2, (h, w))
    pred = target + rng.uniform(-3, 3, (h, w))
    mask = rng.random((h, w)) > 0.2
    _, analytic = smooth_l1(pred, target, mask)
    if corrupt:
        analytic = analytic * 1.01
    numeric, _ = numerical_gradient(lambda: smooth_l1(pred, target, mask)[0], pred)
    return _result("smooth_l1", seed, analytic, numeric, mask)


def random_loss_instance(rng, size=None):
    """Random prediction/GT/guidance triple on a ``size x size`` grid (9..16)."""
    n = int(size or rng.integers(9, 17))
    gt_vals = _random_row_disparity(rng, n, n)
    gt_valid = rng.random((n, n)) > 0.15
    pred = np.clip(gt_vals + rng.normal(0, 0.7, (n, n)), 0.05, None)
    guidance = FeatureMap(rng.uniform(0, 1, (5, n, n)))
    weights = rng.uniform(0.5, 1.5, (1, 1, 3, 3)) / 9.0
    params = GradSmoothParams(
        (PacLayerConfig(3, int(rng.choice([1, 2]))), FilterBank(weights, np.array([0.01]))),
        (PacLayerConfig(3, int(rng.choice([2, 4]))), FilterBank(weights[:, :, ::-1], np.array([-0.02]))),
    )
    return DisparityMap(pred, np.ones((n, n), bool)), DisparityMap(gt_vals, gt_valid), guidance, params


def check_total_loss(seed, corrupt=False):
    rng = np.random.default_rng(seed)
    d, gt, guidance, params = random_loss_instance(rng)
    self_sup = bool(seed % 2)
    cfg = OcclusionConfig(max_scan=int(np.ceil(max(d.values.max(), gt.values[gt.valid].max()))) + 2)
    weights = LossWeights(*rng.uniform(0.5, 1.5, 2))
    vals = d.values

    def objective():
        dm = DisparityMap(vals, d.valid)
        lb = total_loss(dm, gt, guidance, params, cfg, weights, self_sup, gradients=False)
        return lb.total, soft_occlusion(dm, cfg)[1].offset

    _, base = objective()
    analytic = total_loss(d, gt, guidance, params, cfg, weights, self_sup).grad_wrt_disparity
    if corrupt:
        analytic = analytic * 1.01
    numeric, aux = numerical_gradient(objective, vals)
    stable = np.array([
        np.array_equal(aux[i][0], base) and np.array_equal(aux[i][1], base) for i in np.ndindex(vals.shape)
    ]).reshape(vals.shape)
    return _result("total_loss", seed, analytic, numeric, stable)


_CHECKERS = {
    "pac": check_pac,
    "occlusion": check_occlusion,
    "smooth_l1": check_smooth_l1,
    "total_loss": check_total_loss,
}


def run_gradchecks(seed=0, instances=20, checks=CHECKS, corrupt=()):
    """Run ``instances`` seeded instances of each named check.

    ``corrupt`` names checks whose analytic gradient is scaled by 1.01 before
    comparison; used to confirm the harness detects a wrong backward pass.
    """
    results = []
    for name in checks:
        for i in range(instances):
            results.append(_CHECKERS[name](seed + i, corrupt=name in corrupt))
    return results


def summarize(results):
    """Per-check worst relative error and overall pass flag."""
    summary = {}
    for r in results:
        s = summary.setdefault(r.name, {"max_rel_error": 0.0, "instances": 0, "passed": True})
        s["max_rel_error"] = max(s["max_rel_error"], r.max_rel_error)
        s["instances"] += 1
        s["passed"] = s["passed"] and r.passed
    return summary
