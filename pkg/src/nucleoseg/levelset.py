"""Localized region-based level-set refinement with the sparse field method.

Each nucleus is refined independently inside its own padded bounding box.
The evolving surface is the zero level of ``phi`` (positive inside). At every
zero-layer voxel ``x`` the interior and exterior means ``u_x``, ``v_x`` are
taken over a ball of radius ``min(radius, |x - x_other|)``, where
``x_other`` is the closest voxel claimed by another nucleus, and the speed is
the localized region force plus ``lam`` times the mean curvature.
"""

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import ndimage as ndi

from . import _sfm
from .errors import ContourCollapsedError

__all__ = [
    "LocalizationParams",
    "LevelSetFront",
    "smoothed_heaviside",
    "smoothed_dirac",
    "init_signed_distance",
    "evolve",
    "refine_all",
    "surface_area",
]

_ENERGIES = {
    "uniform_modeling": _sfm.UNIFORM_MODELING,
    "means_separation": _sfm.MEANS_SEPARATION,
}


def smoothed_heaviside(phi, eps=1.5):
    """Smoothed Heaviside: 1 above ``eps``, 0 below ``-eps``, sine ramp between."""
    if not eps > 0:
        raise ValueError("eps must be > 0")
    phi = np.asarray(phi, dtype=np.float64)
    ramp = 0.5 * (1.0 + phi / eps + np.sin(np.pi * phi / eps) / np.pi)
    out = np.where(phi > eps, 1.0, np.where(phi < -eps, 0.0, ramp))
    return out[()] if out.ndim == 0 else out


def smoothed_dirac(phi, eps=1.5):
    """Raised-cosine Dirac, the exact derivative of :func:`smoothed_heaviside`."""
    if not eps > 0:
        raise ValueError("eps must be > 0")
    phi = np.asarray(phi, dtype=np.float64)
    bump = (1.0 + np.cos(np.pi * phi / eps)) / (2.0 * eps)
    out = np.where(np.abs(phi) <= eps, bump, 0.0)
    return out[()] if out.ndim == 0 else out


@dataclass(frozen=True)
class LocalizationParams:
    radius: float = 9.0
    lam: float = 0.5
    energy_kind: str = "uniform_modeling"
    max_iters: int = 200
    convergence_frac: float = 0.001
    patience: int = 5
    eps: float = 1.5
    refresh: int = 10
    cfl: float = 0.45

    def __post_init__(self):
        if self.radius < 1:
            raise ValueError(f"radius must be >= 1, got {self.radius}")
        if self.lam < 0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")
        if self.energy_kind == "histogram_separation":
            raise ValueError("histogram_separation energy is not supported")
        if self.energy_kind not in _ENERGIES:
            raise ValueError(f"unknown energy_kind {self.energy_kind!r}")
        if self.max_iters < 0 or self.patience < 1 or self.refresh < 1:
            raise ValueError("max_iters >= 0, patience >= 1 and refresh >= 1 required")
        if not 0 < self.cfl <= 0.5:
            raise ValueError("cfl must be in (0, 0.5]")


def _ball(radius):
    """Offsets with ``|o| < radius`` sorted by length, and the lengths."""
    r = int(math.ceil(radius))
    grid = np.mgrid[-r : r + 1, -r : r + 1, -r : r + 1].reshape(3, -1).T
    dist = np.sqrt(np.sum(grid.astype(np.float64) ** 2, axis=1))
    keep = dist < radius
    grid, dist = grid[keep], dist[keep]
    order = np.lexsort((grid[:, 2], grid[:, 1], grid[:, 0], dist))
    return np.ascontiguousarray(grid[order], dtype=np.int64), dist[order]


def surface_area(region):
    """Number of voxel faces separating ``region`` from its complement."""
    region = np.pad(np.asarray(region, dtype=bool), 1)
    return int(sum(np.count_nonzero(np.diff(region, axis=a)) for a in range(3)))


class LevelSetFront:
    """Sparse-field representation of one nucleus surface.

    ``phi`` lives on the subvolume ``slices`` of the full volume. The layer
    lists hold flat indices into that subvolume.
    """

    def __init__(self, label, slices, phi, lab):
        self.label = int(label)
        self.slices = slices
        self.phi = np.ascontiguousarray(phi, dtype=np.float64)
        self.lab = np.ascontiguousarray(lab, dtype=np.int8)
        flat = self.lab.ravel()
        self.lz, self.ln1, self.lp1, self.ln2, self.lp2 = (
            np.flatnonzero(flat == k).astype(np.int64) for k in (0, -1, 1, -2, 2)
        )
        self.iterations = 0
        self.history = []
        self.converged = False
        self._image = None

    @property
    def shape(self):
        return self.phi.shape

    @property
    def origin(self):
        return tuple(s.start for s in self.slices)

    def region(self):
        return self.phi > 0

    def layer_lists(self):
        return {0: self.lz, -1: self.ln1, 1: self.lp1, -2: self.ln2, 2: self.lp2}

    def attach(self, image, params):
        """Cache the image crop, ball offsets and Heaviside/Dirac fields."""
        self._image = np.ascontiguousarray(np.asarray(image, dtype=np.float64)[self.slices])
        self._offsets, self._offdist = _ball(params.radius)
        ny, nz = self.shape[1], self.shape[2]
        o = self._offsets
        self._flat_offsets = (o[:, 0] * ny + o[:, 1]) * nz + o[:, 2]
        self._radius = float(params.radius)
        self._eps = float(params.eps)
        self._psi = np.full(self._image.size, np.inf)
        self._H = smoothed_heaviside(self.phi, self._eps).ravel().copy()
        self._D = smoothed_dirac(self.phi, self._eps).ravel().copy()

    def set_neighbors(self, labels):
        """Limit the local ball by the distance to voxels of other nuclei."""
        crop = np.asarray(labels)[self.slices]
        other = (crop > 0) & (crop != self.label)
        if other.any():
            self._psi = ndi.distance_transform_edt(~other).ravel()
        else:
            self._psi = np.full(crop.size, np.inf)

    def step(self, params):
        """One sparse-field iteration; returns how many zero-layer voxels crossed the interface."""
        if self._image is None:
            raise RuntimeError("call attach() before stepping")
        if self.lz.size == 0 or not np.any(self.phi > 0):
            raise ContourCollapsedError(f"contour collapsed (label {self.label})")
        shape = np.array(self.shape, dtype=np.int64)
        flat_phi = self.phi.ravel()
        force, stiff = _sfm.local_force(
            self.lz, self._image.ravel(), flat_phi, self._H, self._D, self._psi, self._radius,
            shape, self._offsets, self._flat_offsets, self._offdist,
            _ENERGIES[params.energy_kind],
        )
        speed = force
        if params.lam > 0:
            speed = force + params.lam * _sfm.curvature(self.lz, flat_phi, shape)
        # per-point time scale: stiff points would overshoot, so divide by the
        # local stiffness (floored at 1, where curvature dominates); this leaves
        # the fixed points of force + lam * curvature unchanged
        speed = speed / np.maximum(stiff, 1.0)
        # CFL guard: no voxel moves more than cfl per step; small speeds are not amplified
        dt = params.cfl / max(np.abs(speed).max(), 1.0)
        dphi = speed * dt

        n_zero = self.lz.size
        old_zero = self.lz.copy()
        was_inside = flat_phi[old_zero] > 0
        old_band = np.concatenate([self.lz, self.ln1, self.lp1, self.ln2, self.lp2])
        self.lz, self.ln1, self.lp1, self.ln2, self.lp2, _ = _sfm.sfm_update(
            flat_phi, self.lab.ravel(), shape,
            self.lz, self.ln1, self.lp1, self.ln2, self.lp2, dphi,
        )
        self.ln1, self.lp1, self.ln2, self.lp2 = _sfm.tidy_layers(
            flat_phi, self.lab.ravel(), shape, self.ln1, self.lp1, self.ln2, self.lp2
        )
        for pts in (old_band, self.lz, self.ln1, self.lp1, self.ln2, self.lp2):
            _sfm.heaviside_dirac(pts, flat_phi, self._eps, self._H, self._D)
        # zero-layer voxels that crossed the interface; hand-offs between the
        # zero and +-1 layers on the same side are sub-voxel flicker
        moved = int(np.count_nonzero((flat_phi[old_zero] > 0) != was_inside))
        self.iterations += 1
        self.history.append(moved / max(n_zero, 1))
        recent = self.history[-params.patience :]
        if len(recent) == params.patience and max(recent) < params.convergence_frac:
            self.converged = True
        if self.lz.size == 0 or not np.any(self.phi > 0):
            raise ContourCollapsedError(f"contour collapsed (label {self.label})")
        return moved

    def run(self, params, n_iters):
        for _ in range(n_iters):
            if self.converged or self.iterations >= params.max_iters:
                break
            self.step(params)
        return self

    def check_layers(self):
        """Assert the sparse-field layer invariants (used by the tests)."""
        flat_phi = self.phi.ravel()
        flat_lab = self.lab.ravel()
        assert np.all(np.abs(flat_phi[self.lz]) <= 0.5 + 1e-12)
        assert np.all((flat_phi[self.lp1] > 0.5) & (flat_phi[self.lp1] <= 1.5 + 1e-12))
        assert np.all((flat_phi[self.ln1] < -0.5) & (flat_phi[self.ln1] >= -1.5 - 1e-12))
        for k, pts in self.layer_lists().items():
            assert np.all(flat_lab[pts] == k)
            if k == 0 or pts.size == 0:
                continue
            inner = k - np.sign(k)
            pad = np.pad(self.lab, 1, constant_values=-4)
            coords = np.stack(np.unravel_index(pts, self.shape), axis=1) + 1
            ok = np.zeros(len(pts), dtype=bool)
            for d in np.vstack([np.eye(3, dtype=int), -np.eye(3, dtype=int)]):
                nb = coords + d
                ok |= pad[tuple(nb.T)] == inner
            assert ok.all(), f"layer {k} voxel without a layer-{inner} neighbor"


def init_signed_distance(labels, label, radius=9.0, margin=3):
    """Signed distance front for one label of a label volume.

    ``phi`` is the Euclidean distance to the nearest voxel of the other
    side, minus half a voxel, so the zero level sits on the voxel faces
    between the region and its complement: the region's boundary voxels get
    +0.5 and the adjacent exterior voxels -0.5. The working box is the
    region's bounding box padded by ``radius + margin``.
    """
    labels = np.asarray(labels)
    region = labels == label
    if not region.any():
        raise ValueError(f"label {label} has an empty region")
    pad = int(math.ceil(radius)) + int(margin)
    idx = np.nonzero(region)
    slices = tuple(
        slice(max(int(i.min()) - pad, 0), min(int(i.max()) + pad + 1, n))
        for i, n in zip(idx, labels.shape)
    )
    sub = region[slices]
    if sub.all():
        d_in = np.full(sub.shape, np.inf)
    else:
        d_in = ndi.distance_transform_edt(sub)
    d_out = ndi.distance_transform_edt(~sub)
    phi = np.where(sub, d_in - 0.5, -(d_out - 0.5))

    lab = np.where(sub, 3, -3).astype(np.int8)
    zero = np.abs(phi) <= 0.5
    lab[zero] = 0
    six = ndi.generate_binary_structure(3, 1)
    band = zero
    for k in (1, 2):
        ring = ndi.binary_dilation(band, structure=six) & ~band
        lab[ring & sub] = k
        lab[ring & ~sub] = -k
        band = band | ring
    for k, lo, hi in ((1, 0.5, 1.5), (2, 1.5, 2.5)):
        for sgn in (1, -1):
            sel = lab == sgn * k
            mag = np.clip(np.abs(phi[sel]), np.nextafter(lo, hi), hi)
            phi[sel] = sgn * mag
    return LevelSetFront(label, slices, phi, lab)


def evolve(front, image, params, neighbors=None):
    """Evolve ``front`` until convergence or ``params.max_iters`` iterations.

    ``neighbors`` is a label volume whose other labels shrink the local ball.
    """
    if front._image is None:
        front.attach(image, params)
    if neighbors is not None:
        front.set_neighbors(neighbors)
    return front.run(params, params.max_iters)


def _assemble(shape, fronts, fallback):
    out = np.zeros(shape, dtype=np.int32)
    best = np.full(shape, -np.inf)
    for label in sorted(fronts):
        front = fronts[label]
        if label in fallback:
            region, phi = fallback[label]
        else:
            region, phi = front.region(), front.phi
        view_best = best[front.slices]
        view_out = out[front.slices]
        win = region & (phi > view_best)
        view_best[win] = phi[win]
        view_out[win] = label
    return out


def refine_all(labels, image, params=LocalizationParams(), workers=1):
    """Refine every labeled nucleus and reassemble a label volume.

    Fronts evolve in passes of ``params.refresh`` iterations against a
    snapshot of the current labels. Overlaps go to the front with the larger
    ``phi``; voxels no front claims become background. A collapsing front
    keeps its input region and triggers a warning.
    """
    labels = np.asarray(labels)
    image = np.asarray(image, dtype=np.float64)
    if labels.shape != image.shape:
        raise ValueError("labels and image shapes differ")
    ids = [int(v) for v in np.unique(labels) if v > 0]
    if params.max_iters == 0 or not ids:
        return labels.astype(np.int32, copy=True)

    fronts = {i: init_signed_distance(labels, i, params.radius) for i in ids}
    initial = {i: (f.region(), f.phi.copy()) for i, f in fronts.items()}
    for f in fronts.values():
        f.attach(image, params)
    collapsed = {}
    current = labels.astype(np.int32, copy=True)

    def advance(front, n):
        front.set_neighbors(current)
        try:
            front.run(params, n)
        except ContourCollapsedError:
            return front.label
        return None

    done = 0
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        while done < params.max_iters:
            active = [
                f for i, f in sorted(fronts.items())
                if i not in collapsed and not f.converged
            ]
            if not active:
                break
            n = min(params.refresh, params.max_iters - done)
            if pool is not None:
                lost = list(pool.map(lambda f: advance(f, n), active))
            else:
                lost = [advance(f, n) for f in active]
            for i in lost:
                if i is not None:
                    warnings.warn(f"contour collapsed for label {i}; keeping its input region")
                    collapsed[i] = initial[i]
            current = _assemble(labels.shape, fronts, collapsed)
            done += n
    finally:
        if pool is not None:
            pool.shutdown()
    return current
