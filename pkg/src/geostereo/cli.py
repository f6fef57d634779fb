"""Command-line entry point: ``geostereo <subcommand> ...``."""

import argparse
import json
import logging
import sys

import numpy as np
from threadpoolctl import threadpool_limits

from . import imageio
from .errors import ContractError, DegenerateInputError, OptimizationError
from .fields import integrate_gradients, rgbxy_guidance, spatial_gradient, DEFAULT_XY_SCALE
from .gradcheck import CHECKS, run_gradchecks, summarize
from .loss import LossWeights
from .metrics import evaluate
from .occlusion import OcclusionConfig, hard_occlusion_oracle, soft_occlusion
from .optimize import RefineConfig, SceneSpec, history_csv, refine_disparity, sparsify, synth_scene
from .pac import DEFAULT_DILATIONS, FilterBank, GradSmoothParams, PacLayerConfig, gradsmooth_apply

log = logging.getLogger("geostereo")


def _constants(args):
    """Model constants in effect for this run, echoed into every JSON report."""
    return {
        "alpha": getattr(args, "alpha", 3.0),
        "d0": getattr(args, "d0", 0.5),
        "lambda1": getattr(args, "lambda1", 1.0),
        "lambda2": getattr(args, "lambda2", 1.0),
        "dilations": list(getattr(args, "dilations", DEFAULT_DILATIONS)),
    }


def _report(args, payload, text):
    if args.json:
        payload = dict(payload, params=_constants(args))
        print(json.dumps(payload))
    else:
        print(text)


def _write(path, data):
    with open(path, "wb") as fh:
        fh.write(data)


def cmd_occlude(args):
    d = imageio.load_pfm(args.disparity)
    cfg = OcclusionConfig(args.alpha, args.d0, args.max_scan)
    occ, _ = soft_occlusion(d, cfg)
    _write(args.out, imageio.write_mask(occ))
    payload = {
        "valid_pixels": int(d.valid.sum()),
        "mean_soft": float(occ.values[d.valid].mean()),
        "soft_fraction_above_half": float(np.mean(occ.values[d.valid] > 0.5)),
    }
    if args.hard_out:
        hard = hard_occlusion_oracle(d, args.threshold)
        _write(args.hard_out, imageio.write_mask(hard))
        payload["hard_fraction"] = float(hard.values[d.valid].mean())
        payload["threshold"] = args.threshold
    _report(args, payload, " ".join(f"{k}={v:g}" for k, v in payload.items()))
    return 0


def _gradsmooth_params(args):
    if args.identity:
        return GradSmoothParams.identity(args.dilations)
    params = GradSmoothParams.default(args.dilations, normalize=args.normalize)
    banks = []
    for path, (cfg, fb) in zip((args.layer1, args.layer2), params.layers):
        if path:
            with open(path, "rb") as fh:
                fb = FilterBank.from_bytes(fh.read())
        banks.append((PacLayerConfig(fb.size, cfg.dilation, normalize=args.normalize), fb))
    return GradSmoothParams(*banks)


def _mean_abs(a, b, mask):
    return float(np.mean(np.abs(a - b)[mask])) if mask.any() else float("nan")


def cmd_smooth(args):
    d = imageio.load_pfm(args.disparity)
    image = imageio.load_image(args.guidance)
    if image.spatial_shape != d.shape:
        raise ContractError(f"guidance {image.spatial_shape} and disparity {d.shape} differ in size")
    guidance = rgbxy_guidance(image, args.xy_scale)
    g = spatial_gradient(d)
    refined, _ = gradsmooth_apply(g, guidance, _gradsmooth_params(args))
    imageio.save_pfm(args.out_dx, np.where(refined.valid, refined.dx, np.inf))
    imageio.save_pfm(args.out_dy, np.where(refined.valid, refined.dy, np.inf))
    payload = {"valid_gradients": int(refined.valid.sum())}
    if args.preview:
        preview = integrate_gradients(refined, d)
        imageio.save_pfm(args.preview, np.where(d.valid, np.maximum(preview, 0.0), np.inf))
    if args.gt:
        gt = imageio.load_pfm(args.gt)
        g_gt = spatial_gradient(gt)
        mask = refined.valid & g_gt.valid
        payload["raw_gradient_mae"] = 0.5 * (_mean_abs(g.dx, g_gt.dx, mask) + _mean_abs(g.dy, g_gt.dy, mask))
        payload["refined_gradient_mae"] = 0.5 * (
            _mean_abs(refined.dx, g_gt.dx, mask) + _mean_abs(refined.dy, g_gt.dy, mask)
        )
    _report(args, payload, " ".join(f"{k}={v:g}" for k, v in payload.items()))
    return 0


def cmd_refine(args):
    init = imageio.load_pfm(args.init)
    gt = imageio.load_pfm(args.gt)
    image = imageio.load_image(args.guidance)
    if not (init.shape == gt.shape == image.spatial_shape):
        raise ContractError("init, gt and guidance must share one size")
    cfg = RefineConfig(
        step_size=args.step_size,
        iterations=args.iterations,
        optimize_filters=args.optimize_filters,
        gt_fraction=args.gt_fraction,
        rng_seed=args.seed,
        warm_iterations=args.warm_iterations,
        self_supervised=not args.gt_gradients_only,
        params=GradSmoothParams.default(args.dilations, normalize=args.normalize,
                                        learnable=args.optimize_filters),
        occlusion=OcclusionConfig(args.alpha, args.d0),
    )
    sparse = sparsify(gt, cfg.gt_fraction, cfg.rng_seed)
    weights = LossWeights(args.lambda1, args.lambda2)
    try:
        refined, history = refine_disparity(init, sparse, rgbxy_guidance(image, args.xy_scale), weights, cfg)
    except OptimizationError as exc:
        if args.history:
            _write(args.history, history_csv(exc.history).encode())
        raise
    imageio.save_pfm(args.out, refined)
    if args.history:
        _write(args.history, history_csv(history).encode())
    payload = dict(history[-1].to_dict(), iterations=len(history) - 1)
    payload["initial"] = history[0].to_dict()
    payload["mae_before"] = evaluate(init, gt).mae
    payload["mae_after"] = evaluate(refined, gt).mae
    _report(args, payload, f"total {history[0].total:.6g} -> {history[-1].total:.6g}; "
                           f"MAE {payload['mae_before']:.4f} -> {payload['mae_after']:.4f}")
    return 0


def cmd_eval(args):
    report = evaluate(imageio.load_pfm(args.pred), imageio.load_pfm(args.gt), args.tau, args.max_disparity)
    if args.json:
        print(json.dumps(dict(json.loads(report.to_json()), params=_constants(args))))
    else:
        print(report)
    return 0


def cmd_gradcheck(args):
    checks = tuple(args.checks or CHECKS)
    results = run_gradchecks(args.seed, args.instances, checks, corrupt=tuple(args.corrupt or ()))
    summary = summarize(results)
    ok = all(s["passed"] for s in summary.values())
    if args.json:
        print(json.dumps({"passed": ok, "checks": summary, "params": _constants(args)}))
    else:
        for name, s in summary.items():
            status = "PASS" if s["passed"] else "FAIL"
            print(f"{status} {name:<11} max rel error {s['max_rel_error']:.3e} over {s['instances']} instances")
    return 0 if ok else 1


def cmd_synth(args):
    with open(args.spec) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ContractError(f"scene spec is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ContractError("scene spec must be a JSON object")
    spec = SceneSpec.from_dict(raw)
    image, gt = synth_scene(spec)
    _write(args.image, imageio.write_image(image))
    imageio.save_pfm(args.gt, gt)
    payload = {"width": spec.width, "height": spec.height, "planes": len(spec.planes),
               "min_disparity": float(gt.values[gt.valid].min()),
               "max_disparity": float(gt.values[gt.valid].max())}
    _report(args, payload, " ".join(f"{k}={v:g}" for k, v in payload.items()))
    return 0


def _positive(kind):
    def parse(text):
        value = kind(text)
        if value <= 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return value
    return parse


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=_positive(int), default=None,
                        help="cap BLAS/OpenMP threads")
    common.add_argument("--json", action="store_true", help="print a single-line JSON report")
    common.add_argument("-v", "--verbose", action="store_true")

    occ = argparse.ArgumentParser(add_help=False)
    occ.add_argument("--alpha", type=_positive(float), default=3.0)
    occ.add_argument("--d0", type=float, default=0.5)

    smooth = argparse.ArgumentParser(add_help=False)
    smooth.add_argument("--dilations", type=_positive(int), nargs=2, default=list(DEFAULT_DILATIONS))
    smooth.add_argument("--normalize", action="store_true", help="normalise affinities per pixel")
    smooth.add_argument("--xy-scale", type=_positive(float), default=DEFAULT_XY_SCALE)

    p = argparse.ArgumentParser(prog="geostereo", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("occlude", parents=[common, occ], help="occlusion map from a disparity PFM")
    s.add_argument("disparity")
    s.add_argument("--out", required=True, help="soft occlusion PNG")
    s.add_argument("--hard-out", help="also write the geometric {0,1} map here")
    s.add_argument("--threshold", type=float, default=0.0, help="hard-map threshold t")
    s.add_argument("--max-scan", type=_positive(int), default=None)
    s.set_defaults(func=cmd_occlude)

    s = sub.add_parser("smooth", parents=[common, smooth], help="GradSmooth-filter disparity gradients")
    s.add_argument("disparity")
    s.add_argument("guidance")
    s.add_argument("--out-dx", required=True)
    s.add_argument("--out-dy", required=True)
    s.add_argument("--preview", help="least-squares reintegrated disparity PFM")
    s.add_argument("--gt", help="GT disparity PFM to report gradient MAE against")
    s.add_argument("--identity", action="store_true", help="use identity filters")
    s.add_argument("--layer1", help="GPFB1 filter bank for the first layer")
    s.add_argument("--layer2", help="GPFB1 filter bank for the second layer")
    s.set_defaults(func=cmd_smooth)

    s = sub.add_parser("refine", parents=[common, occ, smooth], help="refine a disparity map under the full loss")
    s.add_argument("init")
    s.add_argument("gt")
    s.add_argument("guidance")
    s.add_argument("--out", required=True)
    s.add_argument("--history", help="loss history CSV")
    s.add_argument("--lambda1", type=float, default=1.0)
    s.add_argument("--lambda2", type=float, default=1.0)
    s.add_argument("--iterations", type=_positive(int), default=500)
    s.add_argument("--step-size", type=_positive(float), default=0.05)
    s.add_argument("--gt-fraction", type=float, default=1.0)
    s.add_argument("--warm-iterations", type=int, default=0)
    s.add_argument("--optimize-filters", action="store_true")
    s.add_argument("--gt-gradients-only", action="store_true",
                   help="supervise gradients only where GT gradients exist")
    s.set_defaults(func=cmd_refine)

    s = sub.add_parser("eval", parents=[common], help="bad-tau and MAE against GT")
    s.add_argument("pred")
    s.add_argument("gt")
    s.add_argument("--tau", type=float, default=2.0)
    s.add_argument("--max-disparity", type=float, default=None)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of all backward passes")
    s.add_argument("--instances", type=_positive(int), default=20)
    s.add_argument("--checks", nargs="+", choices=CHECKS)
    s.add_argument("--corrupt", nargs="+", choices=CHECKS, help=argparse.SUPPRESS)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("synth", parents=[common], help="render a piecewise-planar scene")
    s.add_argument("spec", help="scene JSON")
    s.add_argument("--image", required=True)
    s.add_argument("--gt", required=True)
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with threadpool_limits(limits=args.threads):
            return args.func(args)
    except OptimizationError as exc:
        print(f"error: {exc} after {len(exc.history)} iterates", file=sys.stderr)
    except (OSError, ValueError, ContractError, DegenerateInputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
