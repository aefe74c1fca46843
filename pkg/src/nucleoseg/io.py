"""Volume and label file formats.

Two containers are supported:

* multi-page grayscale TIFF, one page per z-slice;
* raw binary with a JSON sidecar ``{"dims": [x, y, z], "dtype": ..., "spacing": [sx, sy, sz]}``,
  x varying fastest.

In memory every array is indexed ``[x, y, z]``. The sidecar of ``a.raw`` is
``a.json``.
"""

import json
from pathlib import Path

import numpy as np
import tifffile

from .volume import Volume3D

__all__ = [
    "read_array",
    "read_volume",
    "read_labels",
    "write_labels",
    "write_volume",
    "write_raw",
    "sidecar_path",
]

TIFF_SUFFIXES = {".tif", ".tiff"}


def sidecar_path(path):
    return Path(path).with_suffix(".json")


def _is_tiff(path):
    return Path(path).suffix.lower() in TIFF_SUFFIXES


def read_array(path):
    """Return ``(array[x, y, z], spacing)`` exactly as stored (no rescaling)."""
    path = Path(path)
    if _is_tiff(path):
        data = tifffile.imread(path)
        if data.ndim == 2:
            data = data[np.newaxis]
        if data.ndim != 3:
            raise ValueError(f"{path}: expected a grayscale stack, got shape {data.shape}")
        return np.ascontiguousarray(data.transpose(2, 1, 0)), (1.0, 1.0, 1.0)

    side = sidecar_path(path)
    if not side.exists():
        raise FileNotFoundError(f"{path}: missing sidecar header {side}")
    with open(side) as fh:
        header = json.load(fh)
    dims = [int(d) for d in header["dims"]]
    dtype = np.dtype(header["dtype"])
    spacing = tuple(float(s) for s in header.get("spacing", (1.0, 1.0, 1.0)))
    if len(dims) != 3 or len(spacing) != 3:
        raise ValueError(f"{side}: dims and spacing need three entries")
    count = int(np.prod(dims))
    flat = np.fromfile(path, dtype=dtype)
    if flat.size != count:
        raise ValueError(f"{path}: expected {count} values of {dtype}, found {flat.size}")
    # x fastest on disk means C order (z, y, x)
    data = flat.reshape(dims[::-1]).transpose(2, 1, 0)
    return np.ascontiguousarray(data), spacing


def read_volume(path, spacing=None):
    """Read an intensity volume and normalize it to [0, 1]."""
    data, stored = read_array(path)
    return Volume3D(data, tuple(spacing) if spacing is not None else stored)


def read_labels(path):
    data, _ = read_array(path)
    if data.dtype.kind not in "iu":
        if not np.all(data == np.round(data)):
            raise ValueError(f"{path}: label volume is not integer-valued")
    if data.min(initial=0) < 0:
        raise ValueError(f"{path}: label volume has negative values")
    return data.astype(np.int32)


def write_raw(path, data, spacing=(1.0, 1.0, 1.0)):
    path = Path(path)
    data = np.asarray(data)
    data.transpose(2, 1, 0).tofile(path)
    header = {"dims": list(data.shape), "dtype": data.dtype.str, "spacing": list(spacing)}
    with open(sidecar_path(path), "w") as fh:
        json.dump(header, fh)


def write_labels(path, labels, spacing=(1.0, 1.0, 1.0)):
    """Write labels as 16-bit data (multi-page TIFF or raw, by suffix)."""
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() > np.iinfo(np.uint16).max):
        raise ValueError("labels must lie in [0, 65535] for 16-bit output")
    out = labels.astype(np.uint16)
    if _is_tiff(path):
        tifffile.imwrite(path, np.ascontiguousarray(out.transpose(2, 1, 0)), photometric="minisblack")
    else:
        write_raw(path, out, spacing)


def write_volume(path, data, spacing=(1.0, 1.0, 1.0)):
    """Write a scalar volume as float32 (multi-page TIFF or raw, by suffix)."""
    out = np.asarray(data, dtype=np.float32)
    if _is_tiff(path):
        tifffile.imwrite(path, np.ascontiguousarray(out.transpose(2, 1, 0)), photometric="minisblack")
    else:
        write_raw(path, out, spacing)
