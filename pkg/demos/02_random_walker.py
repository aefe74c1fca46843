"""Random-walker probabilities for two touching nuclei sharing one component.

Run: python demos/02_random_walker.py
"""

import numpy as np

from nucleoseg import random_walker as rw
from nucleoseg.seeds import SeedSet

shape = (44, 30, 30)
g = np.indices(shape)
a = ((g - np.array([14, 15, 15])[:, None, None, None]) ** 2).sum(0) <= 64
b = ((g - np.array([29, 15, 15])[:, None, None, None]) ** 2).sum(0) <= 64
rng = np.random.default_rng(0)
image = np.clip(np.where(a | b, 0.7, 0.1) + rng.normal(0, 0.05, shape), 0, 1)
mask = a | b

seeds = SeedSet([[14, 15, 15], [29, 15, 15]])
graph = rw.build_graph(image, mask)
field = rw.solve_dirichlet(graph, seeds)
print(f"{graph.n_vertices} vertices, {len(seeds)} seeds, one component")
print(f"probabilities sum to 1: max error {np.abs(field.values.sum(1) - 1).max():.2e}")

# along the axis joining the centres the probability of seed 1 falls from 1 to 0
p1 = field.channel_volume(1)[:, 15, 15]
print("P(seed 1) along x:", " ".join(f"{v:.2f}" for v in p1[8:36]))

R = rw.response_image(field)
grown = rw.grow_seed_regions(R, seeds, mask)
print(f"response range [{R[mask].min():.2f}, {R[mask].max():.2f}], grown voxels {np.count_nonzero(grown)}")
