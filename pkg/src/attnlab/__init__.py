"""Monte Carlo and analytic laboratory for long-context softmax attention
over random spherical contexts."""

__version__ = "0.1.0"

from . import attention, densities, errors, limits, rope, samplers, sphere, stats

__all__ = [
    "__version__",
    "attention",
    "densities",
    "errors",
    "limits",
    "rope",
    "samplers",
    "sphere",
    "stats",
]
