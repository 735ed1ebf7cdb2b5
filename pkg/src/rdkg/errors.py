"""Exception hierarchy shared across the pipeline.

The CLI maps these onto stable exit codes: usage errors exit 1,
InputError exits 2, NumericalError exits 3.
"""


class RdkgError(Exception):
    """Base class for all package errors."""


class InputError(RdkgError, ValueError):
    """Invalid input data or configuration (bad file, bad weights, bad shapes)."""


class NumericalError(RdkgError, RuntimeError):
    """Numerical failure inside a solver (NaN, divergence)."""


class ProviderError(RdkgError, RuntimeError):
    """An external provider (embedding endpoint, LLM) is unavailable."""
