"""Acceptance criteria, one test each.

Every test prints a single ``PASS``/``FAIL`` line with the measured numbers
(visible even under output capture) and then asserts the same condition.
Runtime limits are part of each verdict.
"""

import math
import time

import numpy as np
import pytest

from geostereo.fields import DisparityMap, FeatureMap, rgbxy_guidance
from geostereo.gradcheck import run_gradchecks, summarize
from geostereo.imageio import read_pfm, write_pfm
from geostereo.loss import LossWeights, total_loss
from geostereo.metrics import bad_threshold, mae
from geostereo.occlusion import OcclusionConfig, hard_occlusion_oracle, soft_occlusion
from geostereo.optimize import (
    RefineConfig,
    refine_disparity,
    sparsify,
    synth_scene,
    two_plane_spec,
    window_monotone,
)
from geostereo.pac import FilterBank, GradSmoothParams, conv_forward, pac_forward


@pytest.fixture
def verdict(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}")
        assert ok, detail
    return emit


def sigmoid(z):
    return 1.0 / (1.0 + math.exp(-z))


def test_criterion_1_constant_guidance_equals_convolution(verdict):
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(20):
        v = rng.normal(size=(1, 32, 32))
        guide = np.full((5, 32, 32), rng.uniform(-2, 2))
        filt = FilterBank(rng.normal(size=(1, 1, 3, 3)), rng.normal(size=1))
        for dilation in (1, 4, 8):
            pac, _ = pac_forward(v, guide, filt, dilation)
            conv = conv_forward(v, filt, dilation)
            worst = max(worst, float(np.abs(pac.values - conv.values).max()))
    elapsed = time.perf_counter() - start
    verdict(1, worst < 1e-12 and elapsed < 5, f"max |pac - conv| = {worst:.2e} (< 1e-12), {elapsed:.2f}s (< 5s)")


@pytest.mark.slow
def test_criterion_2_gradient_checks(verdict):
    start = time.perf_counter()
    summary = summarize(run_gradchecks(seed=0, instances=20))
    elapsed = time.perf_counter() - start
    ok = all(s["passed"] and s["instances"] >= 20 for s in summary.values()) and len(summary) == 4
    parts = ", ".join(f"{k} {s['max_rel_error']:.1e}" for k, s in summary.items())
    verdict(2, ok and elapsed < 60, f"max rel error {parts} (< 1e-4), {elapsed:.1f}s (< 60s)")


def test_criterion_3_step_edges_hide_k_pixels(verdict):
    start = time.perf_counter()
    failures = []
    for k in range(1, 11):
        for base in (0.0, 3.0, 17.0):
            for at in (12, 20, 31):
                vals = np.full((1, 40), base)
                vals[0, at:] += k
                occ = hard_occlusion_oracle(DisparityMap(vals, np.ones(vals.shape, bool)), 0.0)
                marked = np.nonzero(occ.values[0])[0]
                if not np.array_equal(marked, np.arange(at - k, at)):
                    failures.append((k, base, at, marked.tolist()))
    elapsed = time.perf_counter() - start
    verdict(3, not failures and elapsed < 1,
            f"k in 1..10: {90 - len(failures)}/90 rows mark exactly k pixels, {elapsed:.3f}s (< 1s)")


def test_criterion_4_soft_map_converges_to_hard(verdict):
    rng = np.random.default_rng(4)
    start = time.perf_counter()
    mismatched = 0
    for _ in range(100):
        vals = rng.integers(0, 33, (1, 64)).astype(float)
        d = DisparityMap(vals, np.ones(vals.shape, bool))
        soft, _ = soft_occlusion(d, OcclusionConfig(alpha=50.0))
        hard = hard_occlusion_oracle(d, 1.0)
        mismatched += int(not np.array_equal(soft.values > 0.5, hard.values == 1.0))
    elapsed = time.perf_counter() - start
    verdict(4, mismatched == 0 and elapsed < 5,
            f"{100 - mismatched}/100 rows agree, {elapsed:.2f}s (< 5s)")


def test_criterion_5_point_values(verdict):
    def at(vals, x):
        vals = np.asarray([vals], dtype=float)
        occ, _ = soft_occlusion(DisparityMap(vals, np.ones(vals.shape, bool)))
        return occ.values[0, x]

    cases = {
        "flat": (at([4.0] * 12, 5), sigmoid(-4.5)),
        "step-adjacent": (at([0.0] * 10 + [5.0] * 10, 9), sigmoid(10.5)),
        "grazing": (at(list(range(12)), 5), sigmoid(-1.5)),
    }
    errs = {name: abs(got - want) for name, (got, want) in cases.items()}
    detail = ", ".join(f"{n} {cases[n][0]:.6f} (err {e:.1e})" for n, e in errs.items())
    verdict(5, max(errs.values()) < 1e-6, detail + " (< 1e-6)")


@pytest.mark.slow
def test_criterion_6_gradient_prior_halves_error(verdict):
    image, gt = synth_scene(two_plane_spec(64, 64))
    guidance = rgbxy_guidance(image)
    rng = np.random.default_rng(6)
    init = DisparityMap(np.maximum(gt.values + rng.normal(0.0, 1.0, gt.shape), 0.0), gt.valid)
    sparse = sparsify(gt, 0.1, seed=6)
    start = time.perf_counter()
    results = {}
    for lam1 in (0.0, 1.0):
        refined, history = refine_disparity(init, sparse, guidance, LossWeights(lam1, 1.0),
                                            RefineConfig(iterations=500))
        results[lam1] = (mae(refined, gt), window_monotone([h.total for h in history]))
    elapsed = time.perf_counter() - start
    ratio = results[1.0][0] / results[0.0][0]
    ok = ratio <= 0.5 and results[0.0][1] and results[1.0][1] and elapsed < 60
    verdict(6, ok, f"MAE {results[0.0][0]:.4f} (lambda1=0) -> {results[1.0][0]:.4f} (lambda1=1), "
                   f"ratio {ratio:.3f} (<= 0.5), histories monotone {results[0.0][1]}/{results[1.0][1]}, "
                   f"{elapsed:.1f}s (< 60s)")


def test_criterion_7_metric_fixtures(verdict):
    def row(v):
        v = np.asarray([v], dtype=float)
        return DisparityMap(v, np.ones(v.shape, bool))

    zero = row([0.0] * 4)
    pred = row([0.0, 1.0, 3.0, 5.0])
    bad, err = bad_threshold(pred, zero, 2.0), mae(pred, zero)
    boundary = bad_threshold(row([2.0]), row([0.0]), 2.0)
    verdict(7, bad == 50.0 and err == 2.25 and boundary == 0.0,
            f"bad-2.0 {bad} (50.0), MAE {err} (2.25), error 2.0 counted {boundary} (0.0)")


def test_criterion_8_pfm_roundtrip(verdict):
    rng = np.random.default_rng(8)
    start = time.perf_counter()
    failures = 0
    for _ in range(50):
        h, w = (int(n) for n in rng.integers(1, 40, 2))
        raw = rng.uniform(0, 200, (h, w)).astype(np.float32)
        holes = rng.random((h, w)) < 0.2
        raw[holes] = np.where(rng.random(int(holes.sum())) < 0.5, np.inf, -np.inf).astype(np.float32)
        rows = np.flipud(raw)
        little = b"Pf\n%d %d\n-1\n" % (w, h) + rows.astype("<f4").tobytes()
        big = b"Pf\n%d %d\n1\n" % (w, h) + rows.astype(">f4").tobytes()
        a, b = read_pfm(little), read_pfm(big)
        ok = np.array_equal(a.valid, ~holes) and np.array_equal(b.valid, ~holes)
        ok &= a.values[a.valid].astype(np.float32).tobytes() == raw[~holes].tobytes()
        ok &= b.values[b.valid].astype(np.float32).tobytes() == raw[~holes].tobytes()
        written = write_pfm(a)
        again = read_pfm(written)
        ok &= written == write_pfm(b) == write_pfm(again)
        ok &= np.array_equal(again.valid, a.valid)
        ok &= again.values[again.valid].tobytes() == a.values[a.valid].tobytes()
        failures += int(not ok)
    elapsed = time.perf_counter() - start
    verdict(8, failures == 0 and elapsed < 5,
            f"{50 - failures}/50 maps bit-identical (both endiannesses, +-inf holes), {elapsed:.2f}s (< 5s)")


def test_criterion_9_loss_assembly(verdict):
    rng = np.random.default_rng(9)
    h, w = 14, 18
    img = np.zeros((3, h, w))
    img[1, :, w // 2:] = 1.0
    guidance = rgbxy_guidance(FeatureMap(img))
    worst = 0.0
    for _ in range(10):
        d = DisparityMap(rng.uniform(0, 8, (h, w)), np.ones((h, w), bool))
        gt = DisparityMap(rng.uniform(0, 8, (h, w)), rng.random((h, w)) > 0.3)
        l1, l2 = rng.uniform(0, 5, 2)
        out = total_loss(d, gt, guidance, GradSmoothParams.default(), w=LossWeights(l1, l2))
        worst = max(worst, abs(out.total - (out.l_d + l1 * out.l_g + l2 * out.l_o)))
    d = DisparityMap(rng.uniform(0, 8, (h, w)), np.ones((h, w), bool))
    perfect = total_loss(d, d, guidance, GradSmoothParams.identity()).total
    verdict(9, worst < 1e-12 and perfect == 0.0,
            f"max |total - sum of weighted terms| {worst:.1e} (< 1e-12), perfect prediction total {perfect!r} (0.0)")
