"""Exception types shared across the package.

The CLI maps these onto exit codes: validation/configuration/data problems
exit 1, numeric failures exit 2.
"""


class FsqaError(Exception):
    """Base class for all package errors."""


class ConfigError(FsqaError):
    """Inconsistent hyperparameters or layer/shape configuration."""


class DataError(FsqaError):
    """Malformed input files, labels, or out-of-contract sample content."""


class NumericError(FsqaError):
    """Non-finite values where finite ones are required."""


class UsageError(FsqaError):
    """API misuse, e.g. backward without a recorded forward pass."""
