"""Pipeline configuration: one flat table of tunables, stored as TOML.

Keys are the dataclass field names. ``nms_radius = "auto"`` selects the
distance-transform rule of :func:`nucleoseg.seeds.default_nms_radius`.
"""

import dataclasses
from dataclasses import dataclass

import tomli
import tomli_w

from .levelset import LocalizationParams
from .seeds import FrstParams

__all__ = ["PipelineConfig", "load_config", "parse_override"]


@dataclass(frozen=True)
class PipelineConfig:
    # preprocessing
    denoise_sigma: float = 1.0
    min_contrast: float = 0.1
    """Smallest admissible gap between the Otsu class means; below it the
    volume is treated as containing no nuclei."""
    # seed detection
    n_min: int = 2
    n_max_factor: float = 3.0
    gamma: float = 2.0
    k_n: float = 10.0
    grad_threshold: float = 0.1
    nms_radius: object = "auto"
    min_score_frac: float = 0.1
    # random walker
    beta: float = 50.0
    solver_tol: float = 1e-8
    solver_maxiter: int = 2000
    grow_delta: float = 0.0
    # refinement
    refine: bool = True
    psi: float = 9.0
    lam: float = 0.5
    eps: float = 1.5
    energy_kind: str = "uniform_modeling"
    max_iters: int = 200
    convergence_frac: float = 0.001
    patience: int = 5
    refresh: int = 10
    # evaluation
    rand_domain: str = "foreground"

    def __post_init__(self):
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if f.name == "nms_radius":
                continue
            if f.type is int and isinstance(value, float) and value.is_integer():
                object.__setattr__(self, f.name, int(value))
            elif f.type is float and isinstance(value, int) and not isinstance(value, bool):
                object.__setattr__(self, f.name, float(value))
            value = getattr(self, f.name)
            ok = isinstance(value, f.type) and (f.type is bool or not isinstance(value, bool))
            if not ok:
                raise ValueError(f"{f.name}: expected {f.type.__name__}, got {value!r}")
        if self.nms_radius != "auto":
            if isinstance(self.nms_radius, bool) or not isinstance(self.nms_radius, (int, float)):
                raise ValueError(f"nms_radius must be 'auto' or a number, got {self.nms_radius!r}")
            if not self.nms_radius > 0:
                raise ValueError(f"nms_radius must be > 0, got {self.nms_radius}")
            object.__setattr__(self, "nms_radius", float(self.nms_radius))
        if not self.denoise_sigma >= 0:
            raise ValueError(f"denoise_sigma must be >= 0, got {self.denoise_sigma}")
        if not self.min_contrast >= 0:
            raise ValueError(f"min_contrast must be >= 0, got {self.min_contrast}")
        if not 0 <= self.min_score_frac <= 1:
            raise ValueError(f"min_score_frac must be in [0, 1], got {self.min_score_frac}")
        if not self.beta > 0:
            raise ValueError(f"beta must be > 0, got {self.beta}")
        if not self.solver_tol > 0 or self.solver_maxiter < 1:
            raise ValueError("solver_tol > 0 and solver_maxiter >= 1 required")
        if not self.grow_delta >= 0:
            raise ValueError(f"grow_delta must be >= 0, got {self.grow_delta}")
        if self.rand_domain not in ("foreground", "all"):
            raise ValueError(f"rand_domain must be 'foreground' or 'all', got {self.rand_domain!r}")
        # delegate the remaining checks to the stage parameter objects
        self.frst_params()
        self.localization_params()

    def frst_params(self):
        return FrstParams(
            n_min=self.n_min,
            n_max_factor=self.n_max_factor,
            gamma=self.gamma,
            k_n=self.k_n,
            grad_threshold=self.grad_threshold,
        )

    def localization_params(self):
        return LocalizationParams(
            radius=self.psi,
            lam=self.lam,
            energy_kind=self.energy_kind,
            max_iters=self.max_iters,
            convergence_frac=self.convergence_frac,
            patience=self.patience,
            eps=self.eps,
            refresh=self.refresh,
        )

    def to_dict(self):
        return dataclasses.asdict(self)

    def to_toml(self):
        return tomli_w.dumps(self.to_dict())

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_toml())

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown configuration keys: {', '.join(unknown)}")
        return cls(**d)

    @classmethod
    def from_toml(cls, text):
        return cls.from_dict(tomli.loads(text))

    def with_overrides(self, overrides):
        """Apply ``key=value`` strings (TOML values; bare words are strings)."""
        d = self.to_dict()
        for item in overrides:
            key, value = parse_override(item)
            d[key] = value
        return self.from_dict(d)


def parse_override(item):
    key, sep, raw = item.partition("=")
    key = key.strip()
    if not sep or not key:
        raise ValueError(f"override must look like key=value, got {item!r}")
    raw = raw.strip()
    try:
        value = tomli.loads(f"v = {raw}")["v"]
    except tomli.TOMLDecodeError:
        value = raw
    return key, value


def load_config(path=None, overrides=()):
    """Defaults, then the TOML file at ``path`` (if any), then ``overrides``."""
    config = PipelineConfig()
    if path is not None:
        with open(path, "rb") as fh:
            config = PipelineConfig.from_dict(tomli.load(fh))
    return config.with_overrides(overrides) if overrides else config
