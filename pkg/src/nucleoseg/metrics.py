"""Segmentation accuracy: overlap, Tanimoto, F-score, Rand index, Hausdorff.

Regions are boolean arrays; label volumes are integer arrays with 0 for
background. Objects of an automated and a reference labeling are paired by
greedy maximal overlap before per-object scores are computed.
"""

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage as ndi

__all__ = [
    "dice",
    "tanimoto",
    "fscore",
    "rand_index",
    "hausdorff",
    "boundary",
    "match_labels",
    "match_and_report",
    "aggregate_reports",
    "MetricsReport",
    "OVERLAP_METRICS",
]

OVERLAP_METRICS = ("dice", "tanimoto", "precision", "recall", "fscore")
PAIR_FIELDS = ("auto", "truth") + OVERLAP_METRICS + ("hausdorff",)


def _counts(r1, r2):
    r1 = np.asarray(r1, dtype=bool)
    r2 = np.asarray(r2, dtype=bool)
    if r1.shape != r2.shape:
        raise ValueError(f"shape mismatch: {r1.shape} vs {r2.shape}")
    return int(np.count_nonzero(r1)), int(np.count_nonzero(r2)), int(np.count_nonzero(r1 & r2))


def dice(r1, r2):
    """Mutual overlap ``2 |r1 & r2| / (|r1| + |r2|)``."""
    n1, n2, both = _counts(r1, r2)
    if n1 + n2 == 0:
        raise ValueError("dice is undefined for two empty regions")
    return 2.0 * both / (n1 + n2)


def tanimoto(r1, r2):
    """Tanimoto (Jaccard) coefficient ``|r1 & r2| / |r1 | r2|``."""
    n1, n2, both = _counts(r1, r2)
    if n1 + n2 == 0:
        raise ValueError("tanimoto is undefined for two empty regions")
    return both / (n1 + n2 - both)


def fscore(auto, truth):
    """Return ``(precision, recall, F)`` of ``auto`` against ``truth``."""
    n1, n2, both = _counts(auto, truth)
    if n1 == 0 or n2 == 0:
        raise ValueError("fscore needs two non-empty regions")
    p = both / n1
    r = both / n2
    f = 2.0 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f


def rand_index(l1, l2, domain="foreground"):
    """Fraction of voxel pairs on which two labelings agree.

    ``domain="foreground"`` restricts the voxels to the union of both
    foregrounds (0 is then one more cluster); ``"all"`` uses every voxel.
    Computed from the contingency table in exact integer arithmetic.
    """
    l1 = np.asarray(l1)
    l2 = np.asarray(l2)
    if l1.shape != l2.shape:
        raise ValueError(f"shape mismatch: {l1.shape} vs {l2.shape}")
    if domain == "foreground":
        keep = (l1 > 0) | (l2 > 0)
        a, b = l1[keep], l2[keep]
    elif domain == "all":
        a, b = l1.ravel(), l2.ravel()
    else:
        raise ValueError(f"unknown domain {domain!r}")
    n = a.size
    if n < 2:
        raise ValueError("rand index needs at least two voxels in the domain")

    def pairs(counts):
        counts = counts.astype(object)
        return int(np.sum(counts * (counts - 1) // 2))

    _, joint = np.unique(np.stack([a, b]), axis=1, return_counts=True)
    _, rows = np.unique(a, return_counts=True)
    _, cols = np.unique(b, return_counts=True)
    total = n * (n - 1) // 2
    same_both = pairs(joint)
    diff_both = total - pairs(rows) - pairs(cols) + same_both
    return (same_both + diff_both) / total


def boundary(region):
    """Region voxels with at least one 6-neighbor outside (the border counts as outside)."""
    region = np.asarray(region, dtype=bool)
    six = ndi.generate_binary_structure(region.ndim, 1)
    return region & ~ndi.binary_erosion(region, structure=six, border_value=0)


def hausdorff(r1, r2, spacing=None):
    """Symmetric Hausdorff distance between the boundaries of two regions.

    Distances are Euclidean in voxel units unless ``spacing`` is given.
    """
    r1 = np.asarray(r1, dtype=bool)
    r2 = np.asarray(r2, dtype=bool)
    if r1.shape != r2.shape:
        raise ValueError(f"shape mismatch: {r1.shape} vs {r2.shape}")
    if not r1.any() or not r2.any():
        raise ValueError("hausdorff needs two non-empty regions")
    box = ndi.find_objects((r1 | r2).astype(np.int8))[0]
    b1 = boundary(np.pad(r1[box], 1))
    b2 = boundary(np.pad(r2[box], 1))
    d_to_2 = ndi.distance_transform_edt(~b2, sampling=spacing)
    d_to_1 = ndi.distance_transform_edt(~b1, sampling=spacing)
    return float(max(d_to_2[b1].max(), d_to_1[b2].max()))


def match_labels(auto, truth):
    """Greedy one-to-one matching by descending overlap.

    Returns ``(pairs, unmatched_auto, unmatched_truth)`` with ``pairs`` a
    list of ``(auto_label, truth_label, overlap)``. Ties go to the smaller
    auto label, then the smaller truth label.
    """
    auto = np.asarray(auto)
    truth = np.asarray(truth)
    if auto.shape != truth.shape:
        raise ValueError(f"shape mismatch: {auto.shape} vs {truth.shape}")
    a_ids = [int(v) for v in np.unique(auto) if v > 0]
    t_ids = [int(v) for v in np.unique(truth) if v > 0]
    both = (auto > 0) & (truth > 0)
    cand = []
    if both.any():
        keys, counts = np.unique(np.stack([auto[both], truth[both]]), axis=1, return_counts=True)
        cand = sorted(
            zip(keys[0].tolist(), keys[1].tolist(), counts.tolist()),
            key=lambda c: (-c[2], c[0], c[1]),
        )
    used_a, used_t, pairs = set(), set(), []
    for a, t, n in cand:
        if a in used_a or t in used_t:
            continue
        used_a.add(a)
        used_t.add(t)
        pairs.append((a, t, n))
    pairs.sort()
    return pairs, [a for a in a_ids if a not in used_a], [t for t in t_ids if t not in used_t]


def _mean_std(values):
    values = [float(v) for v in values]
    if not values:
        return {"mean": None, "std": None, "n": 0}
    mean = math.fsum(values) / len(values)
    if len(values) > 1:
        std = math.sqrt(math.fsum((v - mean) ** 2 for v in values) / (len(values) - 1))
    else:
        std = 0.0
    return {"mean": mean, "std": std, "n": len(values)}


@dataclass
class MetricsReport:
    """Per-pair scores, aggregates and match bookkeeping.

    Overlap aggregates count every unmatched object (on either side) as a
    zero; the Hausdorff aggregate covers matched pairs only.
    """

    pairs: list = field(default_factory=list)
    aggregates: dict = field(default_factory=dict)
    rand_index: float = None
    unmatched_auto: list = field(default_factory=list)
    unmatched_truth: list = field(default_factory=list)

    def matched_mean(self, metric):
        vals = [p[metric] for p in self.pairs]
        return math.fsum(vals) / len(vals) if vals else None

    def to_dict(self):
        return {
            "pairs": [dict(p) for p in self.pairs],
            "aggregates": {k: dict(v) for k, v in self.aggregates.items()},
            "rand_index": self.rand_index,
            "unmatched_auto": list(self.unmatched_auto),
            "unmatched_truth": list(self.unmatched_truth),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            pairs=[dict(p) for p in d["pairs"]],
            aggregates=dict(d["aggregates"]),
            rand_index=d["rand_index"],
            unmatched_auto=list(d["unmatched_auto"]),
            unmatched_truth=list(d["unmatched_truth"]),
        )

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_csv(self, path):
        """One row per matched pair, then one per unmatched object."""
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=PAIR_FIELDS)
            writer.writeheader()
            for p in self.pairs:
                writer.writerow({k: p[k] for k in PAIR_FIELDS})
            zeros = dict.fromkeys(OVERLAP_METRICS, 0.0)
            for a in self.unmatched_auto:
                writer.writerow({"auto": a, "truth": "", **zeros, "hausdorff": ""})
            for t in self.unmatched_truth:
                writer.writerow({"auto": "", "truth": t, **zeros, "hausdorff": ""})


def match_and_report(auto, truth, spacing=None, rand_domain="foreground"):
    """Match objects of ``auto`` to ``truth`` and score every pair."""
    auto = np.asarray(auto)
    truth = np.asarray(truth)
    pairs, un_a, un_t = match_labels(auto, truth)
    a_boxes = ndi.find_objects(auto.astype(np.int64)) if auto.max(initial=0) > 0 else []
    t_boxes = ndi.find_objects(truth.astype(np.int64)) if truth.max(initial=0) > 0 else []

    rows = []
    for a, t, _ in pairs:
        box = tuple(
            slice(min(sa.start, st.start), max(sa.stop, st.stop))
            for sa, st in zip(a_boxes[a - 1], t_boxes[t - 1])
        )
        ra = auto[box] == a
        rt = truth[box] == t
        p, r, f = fscore(ra, rt)
        rows.append({
            "auto": a,
            "truth": t,
            "dice": dice(ra, rt),
            "tanimoto": tanimoto(ra, rt),
            "precision": p,
            "recall": r,
            "fscore": f,
            "hausdorff": hausdorff(ra, rt, spacing),
        })

    n_unmatched = len(un_a) + len(un_t)
    aggregates = {
        m: _mean_std([row[m] for row in rows] + [0.0] * n_unmatched) for m in OVERLAP_METRICS
    }
    aggregates["hausdorff"] = _mean_std([row["hausdorff"] for row in rows])
    try:
        ri = rand_index(auto, truth, rand_domain)
    except ValueError:
        ri = None
    return MetricsReport(rows, aggregates, ri, un_a, un_t)


def aggregate_reports(reports):
    """Dataset-level summary: mean and sample std of the per-volume means."""
    out = {}
    for m in OVERLAP_METRICS + ("hausdorff",):
        vals = [r.aggregates[m]["mean"] for r in reports if r.aggregates[m]["mean"] is not None]
        out[m] = _mean_std(vals)
    out["rand_index"] = _mean_std([r.rand_index for r in reports if r.rand_index is not None])
    return out
