"""Exception hierarchy shared by every module."""


class CovomixError(Exception):
    """Base class for all package errors."""


class DimensionError(CovomixError, ValueError):
    """Tensor or array shapes disagree with what an operation expects."""

    def __init__(self, what, expected, got):
        self.what = what
        self.expected = expected
        self.got = got
        super().__init__(f"{what}: expected {expected}, got {got}")


class NumericalError(CovomixError, FloatingPointError):
    """NaN or infinity showed up where finite values are required."""


class DataError(CovomixError, ValueError):
    """Malformed input data (transcripts, archives, manifests)."""
