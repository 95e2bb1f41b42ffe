"""Exception types shared across the package.

The CLI maps ValidationError to exit code 1 and AnalysisError to exit
code 2; everything else is a bug.
"""


class ValidationError(ValueError):
    """Invalid configuration, malformed file, or violated invariant."""


class AnalysisError(RuntimeError):
    """An analysis step failed (fit divergence, missing peaks, ...)."""
