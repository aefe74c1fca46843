"""Marker-controlled watershed by priority flooding (Meyer's algorithm)."""

import heapq

import numba
import numpy as np

__all__ = ["marker_watershed", "flood"]

_STEPS = np.array(
    [[-1, 0, 0], [1, 0, 0], [0, -1, 0], [0, 1, 0], [0, 0, -1], [0, 0, 1]], dtype=np.int64
)


@numba.njit(cache=True, nogil=True)
def _flood(height, mask, labels):
    nx, ny, nz = height.shape
    flatH = height.ravel()
    flatM = mask.ravel()
    flatL = labels.ravel()
    heap = [(0.0, np.int64(0), np.int64(0))]
    heap.pop()
    counter = 0
    # imposed minima: every marker voxel enters at -inf, in raster order
    for p in range(flatL.shape[0]):
        if flatL[p] > 0:
            heapq.heappush(heap, (-np.inf, np.int64(counter), np.int64(p)))
            counter += 1
    while len(heap) > 0:
        _, _, p = heapq.heappop(heap)
        x = p // (ny * nz)
        y = (p // nz) % ny
        z = p % nz
        for k in range(6):
            qx = x + _STEPS[k, 0]
            qy = y + _STEPS[k, 1]
            qz = z + _STEPS[k, 2]
            if qx < 0 or qy < 0 or qz < 0 or qx >= nx or qy >= ny or qz >= nz:
                continue
            q = (qx * ny + qy) * nz + qz
            if flatM[q] and flatL[q] == 0:
                flatL[q] = flatL[p]
                heapq.heappush(heap, (flatH[q], np.int64(counter), np.int64(q)))
                counter += 1
    return labels


def flood(height, markers, mask):
    """Flood ``height`` from labeled ``markers`` inside ``mask``.

    Queue priority is ``(height, insertion counter)``; a voxel takes the
    label of the first front that reaches it. Foreground voxels unreachable
    from every marker stay 0.
    """
    height = np.ascontiguousarray(height, dtype=np.float64)
    mask = np.ascontiguousarray(mask, dtype=np.bool_)
    labels = np.ascontiguousarray(markers, dtype=np.int32).copy()
    if not (height.shape == mask.shape == labels.shape):
        raise ValueError("height, markers and mask shapes differ")
    labels[~mask] = 0
    return _flood(height, mask, labels)


def marker_watershed(R, grown, mask):
    """Watershed of the negated response ``-R`` seeded by grown regions.

    The grown regions are imposed minima and the background is never
    flooded. No watershed-line voxels are produced.
    """
    grown = np.asarray(grown)
    mask = np.asarray(mask, dtype=bool)
    if not np.any(grown[mask] > 0):
        raise ValueError("empty marker set")
    if np.any(grown[~mask] > 0):
        raise ValueError("markers must lie on the foreground")
    return flood(-np.asarray(R, dtype=np.float64), grown, mask)
