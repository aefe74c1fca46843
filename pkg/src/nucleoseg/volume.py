"""Volumetric containers and the low-level transforms shared by all stages.

Arrays are indexed ``[x, y, z]``. Binary masks are ``bool`` arrays and label
volumes are integer arrays with 0 for background and 1..K for objects.
"""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage as ndi

from .errors import DegenerateHistogramError

__all__ = [
    "Volume3D",
    "normalize_intensity",
    "gaussian_smooth",
    "otsu_threshold",
    "otsu_level",
    "distance_transform",
    "connected_components",
    "structuring_element",
]


@dataclass(frozen=True)
class Volume3D:
    """Scalar field on an ``nx x ny x nz`` lattice with physical spacing.

    ``data`` is normalized to [0, 1] on construction via
    :func:`normalize_intensity`.
    """

    data: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3 or min(data.shape) < 1:
            raise ValueError(f"expected a non-empty 3-D array, got shape {data.shape}")
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 3 or not all(s > 0 and np.isfinite(s) for s in spacing):
            raise ValueError(f"spacing must be three positive numbers, got {self.spacing}")
        data = normalize_intensity(data)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)

    @property
    def dims(self):
        return self.data.shape

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self.data
        return self.data.astype(dtype)


def normalize_intensity(data):
    """Map raw intensities into [0, 1].

    Integer data is divided by the dtype maximum (8-bit stacks by 255);
    floating data is assumed to already be on the unit scale and is clipped.
    """
    data = np.asarray(data)
    if data.dtype == bool:
        return data.astype(np.float64)
    if np.issubdtype(data.dtype, np.integer):
        info = np.iinfo(data.dtype)
        out = data.astype(np.float64) / float(info.max)
        return np.clip(out, 0.0, 1.0)
    out = np.array(data, dtype=np.float64)
    if not np.all(np.isfinite(out)):
        raise ValueError("volume contains non-finite values")
    return np.clip(out, 0.0, 1.0)


def _per_axis(value, name):
    arr = np.broadcast_to(np.asarray(value, dtype=np.float64), (3,)).copy()
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite, got {value}")
    if np.any(arr < 0):
        raise ValueError(f"{name} must be non-negative, got {value}")
    return arr


def gaussian_smooth(volume, sigma=1.0):
    """Separable Gaussian smoothing with reflective boundaries.

    ``sigma`` is a scalar or a per-axis triple in voxels. A zero sigma
    returns an exact copy.
    """
    data = np.asarray(volume, dtype=np.float64)
    sigma = _per_axis(sigma, "sigma")
    if not np.any(sigma):
        return data.copy()
    return ndi.gaussian_filter(data, sigma=sigma, mode="reflect", truncate=4.0)


def otsu_level(volume, nbins=256):
    """Return the Otsu threshold of ``volume`` over an ``nbins`` histogram.

    The histogram spans the data range; the returned level is the center of
    the last bin assigned to the lower class.
    """
    data = np.asarray(volume, dtype=np.float64).ravel()
    lo, hi = data.min(), data.max()
    if not hi > lo:
        raise DegenerateHistogramError("degenerate histogram: volume is constant")
    hist, edges = np.histogram(data, bins=nbins, range=(lo, hi))
    centers = 0.5 * (edges[:-1] + edges[1:])
    hist = hist.astype(np.float64)

    w0 = np.cumsum(hist)
    w1 = np.cumsum(hist[::-1])[::-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        m0 = np.cumsum(hist * centers) / w0
        m1 = (np.cumsum((hist * centers)[::-1]) / w1[::-1])[::-1]
    between = w0[:-1] * w1[1:] * (m0[:-1] - m1[1:]) ** 2
    between = np.nan_to_num(between, nan=-1.0)
    return centers[int(np.argmax(between))]


def otsu_threshold(volume, nbins=256):
    """Foreground mask ``volume > t*`` with ``t*`` the Otsu level."""
    data = np.asarray(volume, dtype=np.float64)
    return data > otsu_level(data, nbins)


def distance_transform(mask, sampling=None):
    """Exact Euclidean distance from each foreground voxel to the background.

    Background voxels get 0. Distances are in voxel units unless
    ``sampling`` gives a per-axis spacing.
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return np.zeros(mask.shape, dtype=np.float64)
    if mask.all():
        raise ValueError("distance transform needs at least one background voxel")
    return ndi.distance_transform_edt(mask, sampling=sampling)


def structuring_element(connectivity):
    if connectivity == 6:
        return ndi.generate_binary_structure(3, 1)
    if connectivity == 26:
        return ndi.generate_binary_structure(3, 3)
    raise ValueError(f"connectivity must be 6 or 26, got {connectivity}")


def connected_components(mask, connectivity=6):
    """Label connected foreground components.

    Labels are 1..C in order of each component's first voxel in raster
    (C-order) scan; background is 0.
    """
    mask = np.asarray(mask, dtype=bool)
    labels, _ = ndi.label(mask, structure=structuring_element(connectivity))
    return labels.astype(np.int32, copy=False)
