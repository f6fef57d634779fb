"""
PFM files, occlusion masks and evaluation
=========================================

Disparity maps travel as PFM files with +inf marking unknown pixels.
Occlusion maps are saved as 8-bit grayscale images. Metrics only score
pixels that have both a prediction and ground truth.
"""

import tempfile
from pathlib import Path

import numpy as np

from geostereo import DisparityMap, soft_occlusion
from geostereo.imageio import load_pfm, save_pfm, write_mask
from geostereo.metrics import evaluate

out = Path(tempfile.mkdtemp())

vals = np.array([[1.0, 2.0, 8.0], [3.0, 4.0, 9.0]])
valid = np.array([[True, False, True], [True, True, True]])
d = DisparityMap(np.where(valid, vals, np.inf), valid)
save_pfm(out / "d.pfm", d)
back = load_pfm(out / "d.pfm")
print("valid mask survives the round trip:", np.array_equal(back.valid, valid))
print("first bytes:", (out / "d.pfm").read_bytes()[:12])

occ, _ = soft_occlusion(d)
(out / "occ.png").write_bytes(write_mask(occ))
print("mask written to", out / "occ.png")

# errors {0, 1, 3, 5}: two exceed 2 pixels, the mean is 2.25
gt = DisparityMap(np.zeros((1, 4)), np.ones((1, 4), bool))
pred = DisparityMap(np.array([[0.0, 1.0, 3.0, 5.0]]), np.ones((1, 4), bool))
print(evaluate(pred, gt))
