"""Per-slice PNG overlays of label boundaries on the grayscale volume."""

import colorsys
from pathlib import Path

import numpy as np
from PIL import Image

__all__ = ["label_colors", "slice_boundaries", "emit_overlays"]


def label_colors(n):
    """``(n + 1, 3)`` uint8 palette; row 0 (background) is black.

    Hues step by the golden ratio so neighboring labels differ.
    """
    colors = np.zeros((n + 1, 3), dtype=np.uint8)
    for i in range(1, n + 1):
        hue = (i * 0.618033988749895) % 1.0
        colors[i] = np.round(np.array(colorsys.hsv_to_rgb(hue, 0.9, 1.0)) * 255)
    return colors


def slice_boundaries(labels2d):
    """Label pixels with an in-slice 4-neighbor carrying a different value."""
    lab = np.asarray(labels2d)
    edge = np.zeros(lab.shape, dtype=bool)
    diff_x = lab[1:, :] != lab[:-1, :]
    diff_y = lab[:, 1:] != lab[:, :-1]
    edge[1:, :] |= diff_x
    edge[:-1, :] |= diff_x
    edge[:, 1:] |= diff_y
    edge[:, :-1] |= diff_y
    return edge & (lab > 0)


def emit_overlays(vol, labels, out_dir, prefix="slice"):
    """Write ``<prefix>_<z>.png`` for every z-slice; returns the paths.

    Image rows run along y and columns along x.
    """
    data = np.asarray(vol, dtype=np.float64)
    labels = np.asarray(labels)
    if data.shape != labels.shape:
        raise ValueError(f"volume {data.shape} and labels {labels.shape} differ in shape")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    gray = np.round(np.clip(data, 0.0, 1.0) * 255).astype(np.uint8)
    palette = label_colors(int(labels.max(initial=0)))
    width = max(4, len(str(data.shape[2] - 1)))
    paths = []
    for z in range(data.shape[2]):
        rgb = np.repeat(gray[:, :, z, None], 3, axis=2)
        lab = labels[:, :, z]
        edge = slice_boundaries(lab)
        rgb[edge] = palette[lab[edge]]
        path = out_dir / f"{prefix}_{z:0{width}d}.png"
        Image.fromarray(np.ascontiguousarray(rgb.transpose(1, 0, 2))).save(path)
        paths.append(path)
    return paths
