"""Splitting integrators for linear and Coulomb-collision SDEs.

Submodules: ``linalg`` (matrix exponential), ``wiener`` (seeded noise),
``problems``, ``direct`` and ``iterative`` (step functions), ``metrics``,
``harness`` (experiments) and ``cli``.
"""

from .errors import (
    ConfigurationError,
    DivergenceError,
    DomainError,
    RejectedInputError,
    SdeSplitError,
    SingularityError,
    UnsupportedConfigurationError,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError",
    "DivergenceError",
    "DomainError",
    "RejectedInputError",
    "SdeSplitError",
    "SingularityError",
    "UnsupportedConfigurationError",
    "__version__",
]
