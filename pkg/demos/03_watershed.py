"""Marker-controlled watershed splitting two touching nuclei at their neck.

Run: python demos/03_watershed.py
"""

import numpy as np

from nucleoseg import random_walker as rw
from nucleoseg.seeds import SeedSet
from nucleoseg.watershed import marker_watershed

shape = (52, 36, 36)
g = np.indices(shape)
a = ((g - np.array([17, 18, 18])[:, None, None, None]) ** 2).sum(0) <= 100
b = ((g - np.array([34, 18, 18])[:, None, None, None]) ** 2).sum(0) <= 100
rng = np.random.default_rng(1)
image = np.clip(np.where(a | b, 0.7, 0.1) + rng.normal(0, 0.05, shape), 0, 1)
mask = a | b

seeds = SeedSet([[17, 18, 18], [34, 18, 18]])
field = rw.solve_dirichlet(rw.build_graph(image, mask), seeds)
R = rw.response_image(field)
labels = marker_watershed(R, rw.grow_seed_regions(R, seeds, mask), mask)

# the true contact plane lies between x = 25 and x = 26
row = labels[:, 18, 18]
last1 = np.flatnonzero(row == 1).max()
print(f"label 1 ends at x = {last1}, label 2 starts at x = {np.flatnonzero(row == 2).min()}")
print(f"every foreground voxel labelled: {np.array_equal(labels > 0, mask)}")
print(f"sizes: {np.bincount(labels.ravel())[1:].tolist()}")
