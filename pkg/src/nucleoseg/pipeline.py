"""End-to-end nucleus segmentation.

smooth -> threshold -> radial symmetry seeds -> random walker -> response
-> seed growth -> watershed -> level-set refinement, with an optional
evaluation against a reference labeling.
"""

import contextlib
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import levelset, metrics, random_walker, seeds, volume, watershed
from .config import PipelineConfig
from .errors import NoNucleiError, PipelineError

__all__ = ["PipelineResult", "run_pipeline", "segment_seeds", "check_probabilities"]


@dataclass
class PipelineResult:
    labels: np.ndarray
    seeds: seeds.SeedSet
    initial_labels: np.ndarray = None
    """Watershed labels before refinement."""
    mask: np.ndarray = None
    response: np.ndarray = None
    report: metrics.MetricsReport = None
    timings: dict = field(default_factory=dict)


class _Stages:
    """Runs named stages, wrapping their failures and keeping partial output."""

    def __init__(self):
        self.partial = {}
        self.timings = {}

    @contextlib.contextmanager
    def __call__(self, name):
        t0 = time.perf_counter()
        try:
            yield
        except (NoNucleiError, PipelineError):
            raise
        except Exception as exc:
            err = PipelineError(name, exc)
            err.partial = dict(self.partial)
            raise err from exc
        finally:
            self.timings[name] = time.perf_counter() - t0


def check_probabilities(field, L=None, atol=1e-6):
    """Assert the random-walker invariants: channels in [0, 1], per-vertex
    sums 1 and Laplacian rows summing to exactly 0."""
    values = field.values
    if np.any(values < 0) or np.any(values > 1):
        raise AssertionError("probability outside [0, 1]")
    err = np.abs(values.sum(axis=1) - 1.0).max(initial=0.0)
    if err > atol:
        raise AssertionError(f"probability sums deviate from 1 by {err:g}")
    if L is None:
        L = random_walker.laplacian(field.graph)
    rows = random_walker.laplacian_row_sums(L)
    if np.any(rows != 0):
        raise AssertionError(f"Laplacian row sums not exactly 0 (max {np.abs(rows).max():g})")


def _foreground(smoothed, config):
    level = volume.otsu_level(smoothed)
    mask = smoothed > level
    lo = smoothed[~mask]
    hi = smoothed[mask]
    contrast = hi.mean() - lo.mean() if lo.size and hi.size else 0.0
    if contrast < config.min_contrast:
        raise NoNucleiError(
            f"no nuclei found: foreground contrast {contrast:.3g} is below "
            f"min_contrast {config.min_contrast:g}"
        )
    return mask


def segment_seeds(data, config, stage=None):
    """Smooth, threshold and detect seeds. Returns ``(smoothed, mask, SeedSet)``."""
    stage = stage or _Stages()
    with stage("smooth"):
        smoothed = volume.gaussian_smooth(data, config.denoise_sigma)
    with stage("threshold"):
        mask = _foreground(smoothed, config)
        stage.partial["mask"] = mask
    with stage("seeds"):
        response = seeds.frst3d(smoothed, mask, config.frst_params())
        radius = (
            seeds.default_nms_radius(mask, config.n_min)
            if config.nms_radius == "auto"
            else config.nms_radius
        )
        top = response[mask].max(initial=0.0)
        found = seeds.detect_seeds(response, mask, radius, config.min_score_frac * top)
        stage.partial["seeds"] = found
    if len(found) == 0:
        raise NoNucleiError("no nuclei found")
    return smoothed, mask, found


def run_pipeline(vol, config=None, truth=None, workers=1, check=False):
    """Segment ``vol`` (a :class:`Volume3D` or array in [0, 1]).

    Foreground components that received no seed are dropped from the mask
    before the random walker. Refinement runs on the unsmoothed intensities.
    With ``check`` the random-walker invariants are asserted.
    Raises :class:`NoNucleiError` when nothing is found and
    :class:`PipelineError` (carrying ``partial`` artifacts) for stage failures.
    """
    config = config or PipelineConfig()
    data = np.asarray(vol, dtype=np.float64)
    stage = _Stages()
    smoothed, mask, found = segment_seeds(data, config, stage)

    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        with stage("random_walker"):
            graph = random_walker.build_graph(smoothed, mask, config.beta)
            comp, _ = graph.components()
            seeded = np.unique(comp[graph.vertex_of(found.coords)])
            if seeded.size < comp.max(initial=-1) + 1:
                keep = np.zeros(mask.size, dtype=bool)
                keep[graph.index[np.isin(comp, seeded)]] = True
                mask = keep.reshape(mask.shape)
                stage.partial["mask"] = mask
                graph = random_walker.build_graph(smoothed, mask, config.beta)
            field = random_walker.solve_dirichlet(
                graph, found, config.solver_tol, config.solver_maxiter, executor=pool
            )
            if check:
                check_probabilities(field)
        with stage("response"):
            response = random_walker.response_image(field)
            stage.partial["response"] = response
        with stage("grow"):
            grown = random_walker.grow_seed_regions(response, found, mask, config.grow_delta)
        with stage("watershed"):
            initial = watershed.marker_watershed(response, grown, mask)
            stage.partial["labels"] = initial
        labels = initial
        if config.refine:
            with stage("refine"):
                labels = levelset.refine_all(
                    initial, data, config.localization_params(), workers=workers
                )
                stage.partial["labels"] = labels
    finally:
        if pool is not None:
            pool.shutdown()

    report = None
    if truth is not None:
        with stage("metrics"):
            report = metrics.match_and_report(labels, truth, rand_domain=config.rand_domain)
    return PipelineResult(
        labels=labels,
        seeds=found,
        initial_labels=initial,
        mask=mask,
        response=response,
        report=report,
        timings=dict(stage.timings),
    )
