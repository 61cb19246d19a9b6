"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: ValidationError -> 1, NumericError -> 2.
"""


class AmrcError(Exception):
    """Base class for all package errors."""


class ValidationError(AmrcError):
    """Bad user input: config files, CLI flags, malformed data files,
    dimension mismatches detectable before any numerics run."""


class NumericError(AmrcError):
    """Runtime numerical failure: non-finite values, diverged training,
    tolerance violations."""
