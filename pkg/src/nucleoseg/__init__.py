"""Volumetric cell-nucleus segmentation.

Seeds from a 3-D radial symmetry transform, a random-walker response image,
marker-controlled watershed and localized level-set refinement, plus the
usual overlap, distance and partition metrics for evaluation.
"""

from .config import PipelineConfig, load_config
from .errors import (
    ContourCollapsedError,
    ConvergenceError,
    DegenerateHistogramError,
    NoNucleiError,
    NucleosegError,
    PackingError,
    PipelineError,
    UnseededComponentError,
)
from .levelset import LocalizationParams, refine_all
from .metrics import MetricsReport, match_and_report
from .pipeline import PipelineResult, run_pipeline
from .seeds import FrstParams, SeedSet
from .synthetic import SyntheticSpec, generate_synthetic
from .volume import Volume3D

__version__ = "0.1.0"

__all__ = [
    "ContourCollapsedError",
    "ConvergenceError",
    "DegenerateHistogramError",
    "FrstParams",
    "LocalizationParams",
    "MetricsReport",
    "NoNucleiError",
    "NucleosegError",
    "PackingError",
    "PipelineConfig",
    "PipelineError",
    "PipelineResult",
    "SeedSet",
    "SyntheticSpec",
    "UnseededComponentError",
    "Volume3D",
    "generate_synthetic",
    "load_config",
    "match_and_report",
    "refine_all",
    "run_pipeline",
]
