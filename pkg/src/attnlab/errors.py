"""Exception types shared across the package."""


class AttnLabError(Exception):
    """Base class for all package errors."""


class ZeroVector(AttnLabError):
    """Vector norm underflowed; cannot normalize."""


class DimensionMismatch(AttnLabError):
    """Operands live in different ambient dimensions."""


class AntipodalPoint(AttnLabError):
    """Log map undefined at the antipode of the chart center."""


class DegenerateProjection(AttnLabError):
    """K^T Q x collapsed to (numerically) zero."""


class EnvelopeViolation(AttnLabError):
    """A proposal exceeded the stated rejection envelope."""


class UnnormalizedDensity(AttnLabError):
    """Operation needs a normalized density but none is available."""


class DomainError(AttnLabError):
    """Special-function argument outside its domain."""


class NonTermination(AttnLabError):
    """Iteration guard tripped; parameters are pathological."""


class InsufficientAtoms(AttnLabError):
    """A truncated point-process sample has fewer atoms than requested."""


class EmptySample(AttnLabError):
    """Statistic requested on an empty sample."""


class GridOutOfRange(AttnLabError):
    """A rescaled rank exceeds the context length."""


class UnsupportedDimension(AttnLabError):
    """Experiment only defined for a specific ambient dimension."""


class ConfigError(AttnLabError):
    """Experiment configuration failed validation."""
