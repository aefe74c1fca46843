"""Exception types raised across the segmentation pipeline."""


class NucleosegError(Exception):
    """Base class for domain errors (bad data, not bad usage)."""


class DegenerateHistogramError(NucleosegError, ValueError):
    pass


class UnseededComponentError(NucleosegError, ValueError):
    pass


class ConvergenceError(NucleosegError, RuntimeError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class ContourCollapsedError(NucleosegError, RuntimeError):
    pass


class NoNucleiError(NucleosegError):
    pass


class PackingError(NucleosegError, RuntimeError):
    pass


class PipelineError(NucleosegError):
    """Wraps a failure inside one pipeline stage."""

    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
