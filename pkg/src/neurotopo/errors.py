"""Exception types shared across the pipeline."""


class ValidationError(ValueError):
    """Bad input: shapes, ranges, missing files, violated preconditions."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite or exploding loss."""
