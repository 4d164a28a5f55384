"""Exception types shared across the package.

The CLI maps these onto exit codes: data problems exit with 2, numerical
failures with 3. Contract violations (wrong label set, out-of-range feature
ids, shape mismatches) raise plain ValueError.
"""


class SarError(Exception):
    """Base class for errors raised by this package."""


class DataError(SarError):
    """Malformed or inconsistent input data (bad file, unknown label, ...)."""


class NumericalError(SarError):
    """Numerical failure: divergence, impossible chains, broken agreement."""
