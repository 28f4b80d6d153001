"""Exception hierarchy shared by every refold module."""

from __future__ import annotations


class RefoldError(ValueError):
    """Base class for all library errors."""


class BinningError(RefoldError):
    """Invalid bin edges or mismatched binning between histograms."""


class MergingError(RefoldError):
    """A bin merging does not partition the histogram it is applied to."""


class ResponseError(RefoldError):
    """Response-matrix construction failed (unpaired or empty input)."""


class FoldShapeError(RefoldError):
    """Histogram and response matrix dimensions do not line up."""


class ConfigError(RefoldError):
    """A configuration value is outside its allowed range."""


class SearchSetupError(RefoldError):
    """Stochastic search inputs are inconsistent."""


class DegenerateDataError(RefoldError):
    """Input histogram has no content to work with."""


class StalledIterationError(RefoldError):
    """D'Agostini iteration cannot proceed (zero folded prior under data)."""


class InversionError(RefoldError):
    """Direct matrix inversion is impossible (singular or non-square)."""


class InsufficientPosteriorError(RefoldError):
    """Too few accepted candidates to form posterior bands.

    The partial result is kept on ``partial`` so callers can inspect it.
    """

    def __init__(self, message: str, partial=None):
        super().__init__(message)
        self.partial = partial


class FormatError(RefoldError):
    """Malformed CSV or JSON interchange file."""
