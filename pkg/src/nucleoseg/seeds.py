"""Nucleus seed detection: 3-D fast radial symmetry transform plus greedy
non-maximum suppression.

Each gradient voxel votes at distance ``n`` along its gradient direction
(bright blobs only). Per radius the orientation and magnitude accumulators
are combined as ``(M / k_n) * (min(O, k_n) / k_n) ** gamma`` and blurred by a
Gaussian of variance ``(n_min + n) / 2``. The final response at a voxel is the
maximum over the radii admissible there, ``n <= ceil(n_max_factor * D)`` with
``D`` the distance transform of the foreground mask.
"""

import csv
from dataclasses import dataclass

import numpy as np
from scipy import ndimage as ndi

from .volume import distance_transform

__all__ = [
    "FrstParams",
    "SeedSet",
    "frst3d",
    "detect_seeds",
    "default_nms_radius",
    "radius_limits",
]


@dataclass(frozen=True)
class FrstParams:
    n_min: int = 2
    n_max_factor: float = 3.0
    gamma: float = 2.0
    k_n: float = 10.0
    grad_threshold: float = 0.1
    """Gradients weaker than this fraction of the strongest one cast no vote."""

    def __post_init__(self):
        if int(self.n_min) != self.n_min or self.n_min < 1:
            raise ValueError(f"n_min must be an integer >= 1, got {self.n_min}")
        for name in ("n_max_factor", "gamma", "k_n"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)}")
        if not 0 <= self.grad_threshold < 1:
            raise ValueError(f"grad_threshold must be in [0, 1), got {self.grad_threshold}")

    def sigma(self, n):
        return np.sqrt((self.n_min + n) / 2.0)


class SeedSet:
    """Seed voxels with labels ``1..K`` in acceptance order."""

    def __init__(self, coords, scores=None):
        coords = np.asarray(coords, dtype=np.int64).reshape(-1, 3)
        if scores is None:
            scores = np.zeros(len(coords))
        scores = np.asarray(scores, dtype=np.float64).reshape(-1)
        if len(scores) != len(coords):
            raise ValueError("coords and scores differ in length")
        self.coords = coords
        self.scores = scores

    def __len__(self):
        return len(self.coords)

    def __repr__(self):
        return f"SeedSet(K={len(self)})"

    @property
    def K(self):
        return len(self)

    @property
    def labels(self):
        return np.arange(1, len(self) + 1)

    def permuted(self, order):
        order = np.asarray(order)
        return SeedSet(self.coords[order], self.scores[order])

    def label_volume(self, shape):
        vol = np.zeros(shape, dtype=np.int32)
        if len(self):
            vol[tuple(self.coords.T)] = self.labels
        return vol

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["x", "y", "z", "label", "score"])
            for (x, y, z), label, score in zip(self.coords, self.labels, self.scores):
                writer.writerow([int(x), int(y), int(z), int(label), repr(float(score))])

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            rows = sorted(csv.DictReader(fh), key=lambda r: int(r["label"]))
        labels = [int(r["label"]) for r in rows]
        if labels != list(range(1, len(rows) + 1)):
            raise ValueError(f"{path}: labels must be exactly 1..K")
        coords = [[int(r["x"]), int(r["y"]), int(r["z"])] for r in rows]
        return cls(coords, [float(r["score"]) for r in rows])


def _central_gradient(image):
    kernel = [-0.5, 0.0, 0.5]
    return [ndi.correlate1d(image, kernel, axis=a, mode="reflect") for a in range(3)]


def radius_limits(mask, params=FrstParams()):
    """Per-voxel largest admissible radius ``ceil(n_max_factor * D)``.

    The volume border counts as background so a mask touching the faces
    still has finite distances.
    """
    padded = np.pad(np.asarray(mask, dtype=bool), 1)
    dist = distance_transform(padded)[1:-1, 1:-1, 1:-1]
    # tolerance absorbs round-off in products such as 3 * sqrt(2)
    return np.ceil(params.n_max_factor * dist - 1e-9).astype(np.int64)


def frst3d(image, mask, params=FrstParams()):
    """Bright-blob radial symmetry response, zero outside ``mask``."""
    image = np.asarray(image, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if image.shape != mask.shape:
        raise ValueError("image and mask shapes differ")
    response = np.zeros(image.shape, dtype=np.float64)
    if not mask.any():
        return response

    nmax = radius_limits(mask, params)
    n_hi = int(nmax.max())
    grads = _central_gradient(image)
    mag = np.sqrt(sum(g * g for g in grads))
    top = mag.max()
    if top == 0 or n_hi < params.n_min:
        return response

    voters = np.nonzero(mag > params.grad_threshold * top)
    weight = mag[voters]
    unit = np.stack([g[voters] / weight for g in grads], axis=1)
    origin = np.stack(voters, axis=1).astype(np.float64)
    shape = np.array(image.shape)
    size = image.size

    for n in range(params.n_min, n_hi + 1):
        target = np.rint(origin + n * unit).astype(np.int64)
        inside = np.all((target >= 0) & (target < shape), axis=1)
        flat = np.ravel_multi_index(tuple(target[inside].T), image.shape)
        orient = np.bincount(flat, minlength=size).astype(np.float64)
        magn = np.bincount(flat, weights=weight[inside], minlength=size)
        orient = np.minimum(orient, params.k_n)
        f_n = (magn / params.k_n) * (orient / params.k_n) ** params.gamma
        s_n = ndi.gaussian_filter(f_n.reshape(image.shape), params.sigma(n), mode="constant")
        admissible = nmax >= n
        np.maximum(response, np.where(admissible, s_n, 0.0), out=response)

    response[~mask] = 0.0
    return response


def default_nms_radius(mask, n_min=2):
    """``n_min`` plus the median foreground distance-transform value."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return float(n_min)
    dist = distance_transform(np.pad(mask, 1))[1:-1, 1:-1, 1:-1]
    return float(n_min + np.median(dist[mask]))


def detect_seeds(response, mask, nms_radius, min_score=None):
    """Greedy non-maximum suppression over the local maxima of ``response``.

    Candidates are foreground voxels equal to the maximum of their
    26-neighborhood with score above ``min_score`` (default: 10% of the
    global maximum). They are visited by descending score, ties broken by
    raster index, and a candidate closer than ``nms_radius`` to an accepted
    seed is dropped.
    """
    response = np.asarray(response, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if response.shape != mask.shape:
        raise ValueError("response and mask shapes differ")
    top = response[mask].max() if mask.any() else 0.0
    if top <= 0:
        return SeedSet(np.empty((0, 3)))
    if min_score is None:
        min_score = 0.1 * top

    peak = ndi.maximum_filter(response, size=3, mode="constant", cval=-np.inf)
    cand = mask & (response == peak) & (response >= min_score) & (response > 0)
    flat = np.flatnonzero(cand)
    scores = response.ravel()[flat]
    order = np.lexsort((flat, -scores))
    flat, scores = flat[order], scores[order]
    coords = np.stack(np.unravel_index(flat, response.shape), axis=1)

    r2 = float(nms_radius) ** 2
    kept = []
    accepted = np.empty((0, 3))
    for i, c in enumerate(coords):
        if len(accepted) and np.min(np.sum((accepted - c) ** 2, axis=1)) < r2:
            continue
        kept.append(i)
        accepted = np.vstack([accepted, c])
    return SeedSet(coords[kept], scores[kept])
