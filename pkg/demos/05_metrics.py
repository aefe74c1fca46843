"""Matching automatic labels to a reference and reporting per-nucleus scores.

Run: python demos/05_metrics.py
"""

import numpy as np

from nucleoseg.metrics import match_and_report

shape = (40, 24, 24)
g = np.indices(shape)


def ball(c, r):
    return ((g - np.array(c)[:, None, None, None]) ** 2).sum(0) <= r * r


truth = np.zeros(shape, np.int32)
truth[ball((10, 12, 12), 6)] = 1
truth[ball((28, 12, 12), 7)] = 2

# one nucleus shifted by a voxel, plus a spurious blob
auto = np.zeros(shape, np.int32)
auto[ball((11, 12, 12), 6)] = 5
auto[ball((28, 12, 12), 7)] = 3
auto[1:3, 1:3, 1:3] = 9

rep = match_and_report(auto, truth)
for p in rep.pairs:
    print(f"auto {p['auto']} <-> truth {p['truth']}: dice {p['dice']:.3f}, "
          f"hausdorff {p['hausdorff']:.2f}")
print(f"unmatched auto {rep.unmatched_auto}, unmatched truth {rep.unmatched_truth}")
print(f"rand index {rep.rand_index:.4f}")
print(f"mean dice {rep.aggregates['dice']['mean']:.3f} over {rep.aggregates['dice']['n']}")
