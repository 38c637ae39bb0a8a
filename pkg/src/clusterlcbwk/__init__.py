"""Clustered linear contextual bandits with knapsack constraints."""

from .exceptions import ContractViolation, GenerationError, NumericalError, ValidationError

__version__ = "0.1.0"

__all__ = [
    "ContractViolation",
    "GenerationError",
    "NumericalError",
    "ValidationError",
    "__version__",
]
