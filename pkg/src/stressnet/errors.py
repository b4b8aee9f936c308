"""Exception hierarchy shared across the package.

Each class carries the process exit code the CLI maps it to:
2 = invalid configuration/parameters, 3 = bad input data, 4 = numerical failure.
"""


class StressnetError(Exception):
    exit_code = 1


class ValidationError(StressnetError):
    """Invalid parameters or configuration."""

    exit_code = 2


class DataError(StressnetError):
    """Malformed or inconsistent input data."""

    exit_code = 3


class NumericalError(StressnetError):
    """Numerical failure (singular block, non-convergence, ...)."""

    exit_code = 4
