"""
Occlusion straight from a disparity map
=======================================

A pixel seen by the left camera is hidden from the right one when some
surface further right along the same row sits close enough to the camera
to cover it. Here we build one scanline with a 6-pixel disparity jump and
compare the exact (hard) test with its sigmoid relaxation.
"""

import numpy as np

from geostereo import DisparityMap, OcclusionConfig, hard_occlusion_oracle, soft_occlusion

# background at disparity 4, foreground from x = 14 on at disparity 10
row = np.array([[4.0] * 14 + [10.0] * 10])
d = DisparityMap(row, np.ones(row.shape, bool))

hard = hard_occlusion_oracle(d)
soft, cache = soft_occlusion(d)

print("x     D    hard  soft")
for x in range(8, 16):
    print(f"{x:2d}  {row[0, x]:5.1f}   {hard.values[0, x]:.0f}   {soft.values[0, x]:.4f}")

# The jump is 6 pixels tall, so exactly 6 pixels left of it are hidden.
print("hidden pixels:", np.nonzero(hard.values[0])[0])

# Pixel 8 grazes the foreground exactly (jump equals distance). The soft map
# subtracts a 0.5 margin, so on integer disparities it approaches the hard
# test with threshold 1, which leaves such grazing pixels visible.
strict = hard_occlusion_oracle(d, threshold=1.0)
for alpha in (1.0, 3.0, 10.0, 50.0):
    s, _ = soft_occlusion(d, OcclusionConfig(alpha=alpha))
    print(f"alpha={alpha:5.1f}  max |soft - hard(t=1)| = {np.abs(s.values - strict.values).max():.2e}")
