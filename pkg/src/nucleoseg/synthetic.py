"""Synthetic nucleus volumes with known ground truth.

Nuclei are textured bright spheres on a dim background with additive
Gaussian noise. The texture is a smoothed random field applied as a
multiplicative speckle so that interiors are not flat.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage as ndi

from .errors import PackingError
from .volume import Volume3D

__all__ = ["SyntheticSpec", "generate_synthetic"]


@dataclass(frozen=True)
class SyntheticSpec:
    dims: tuple = (96, 96, 96)
    count: tuple = (8, 15)
    radius: tuple = (6.0, 14.0)
    base: float = 0.7
    background: float = 0.1
    speckle: float = 0.15
    """Relative amplitude of the multiplicative texture."""
    speckle_scale: float = 1.5
    noise: float = 0.1
    min_gap: float = 2.0
    """Minimum surface-to-surface gap between spheres, in voxels."""
    seed: int = 0
    spacing: tuple = field(default=(1.0, 1.0, 1.0))

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != 3 or min(dims) < 1:
            raise ValueError(f"dims must be three positive ints, got {self.dims}")
        object.__setattr__(self, "dims", dims)
        lo, hi = self.count
        if not 0 <= lo <= hi:
            raise ValueError(f"invalid count range {self.count}")
        rlo, rhi = self.radius
        if not 0 < rlo <= rhi:
            raise ValueError(f"invalid radius range {self.radius}")
        if self.noise < 0 or self.speckle < 0 or self.min_gap < 0:
            raise ValueError("noise, speckle and min_gap must be >= 0")
        if not 0 <= self.background <= 1 or not 0 <= self.base <= 1:
            raise ValueError("intensities must lie in [0, 1]")

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("dims", "count", "radius", "spacing"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def _place(rng, spec, n, max_attempts=1000):
    dims = np.array(spec.dims, dtype=np.float64)
    centers, radii = [], []
    attempts = 0
    while len(centers) < n:
        if attempts >= max_attempts:
            raise PackingError(
                f"could not place {n} spheres after {max_attempts} attempts "
                f"(placed {len(centers)})"
            )
        attempts += 1
        r = rng.uniform(*spec.radius)
        # keep at least one voxel between the sphere and each face
        lo = r + 1.0
        hi = dims - 1.0 - r - 1.0
        if np.any(hi < lo):
            continue
        c = rng.uniform(lo, hi)
        if all(np.linalg.norm(c - c2) >= r + r2 + spec.min_gap for c2, r2 in zip(centers, radii)):
            centers.append(c)
            radii.append(r)
    return centers, radii


def generate_synthetic(spec):
    """Return ``(Volume3D, truth_labels)`` for ``spec``.

    Labels are numbered ``1..n`` in placement order.
    """
    rng = np.random.default_rng(spec.seed)
    n = int(rng.integers(spec.count[0], spec.count[1] + 1))
    centers, radii = _place(rng, spec, n)

    shape = spec.dims
    truth = np.zeros(shape, dtype=np.int32)
    grid = np.indices(shape, dtype=np.float64)
    for label, (c, r) in enumerate(zip(centers, radii), start=1):
        d2 = sum((g - ci) ** 2 for g, ci in zip(grid, c))
        truth[(d2 <= r * r) & (truth == 0)] = label

    texture = ndi.gaussian_filter(rng.standard_normal(shape), spec.speckle_scale)
    sd = texture.std()
    if sd > 0:
        texture /= sd
    image = np.full(shape, spec.background, dtype=np.float64)
    inside = truth > 0
    image[inside] = spec.base * (1.0 + spec.speckle * texture[inside])
    image += rng.normal(0.0, spec.noise, size=shape) if spec.noise > 0 else 0.0
    np.clip(image, 0.0, 1.0, out=image)
    return Volume3D(image, spec.spacing), truth
