"""Dialogue speech generation from transcripts: semantic-token language model,
flow-matching acoustic model, signal front-end and dialogue metrics."""

from .errors import CovomixError, DataError, DimensionError, NumericalError

__version__ = "0.1.0"

__all__ = ["CovomixError", "DataError", "DimensionError", "NumericalError", "__version__"]
