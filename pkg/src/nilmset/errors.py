"""Exception types shared across the package.

Data and configuration problems derive from ``NilmsetError`` so the CLI can
map them to a single exit code; training divergence is kept separate because
it carries a partial report and exits differently.
"""

from __future__ import annotations


class NilmsetError(Exception):
    """Base class for data, format, and configuration errors."""


class ChannelFormatError(NilmsetError):
    """A channel file line could not be parsed."""

    def __init__(self, path, line_number: int, line: str, reason: str):
        self.path = str(path)
        self.line_number = line_number
        self.line = line
        self.reason = reason
        super().__init__(f"{self.path}:{line_number}: {reason}: {line!r}")


class EmptySeriesError(NilmsetError):
    """A channel file yielded zero valid samples."""


class NoValidWindowsError(NilmsetError):
    """A channel produced no window satisfying the activity rule."""


class EmptyMatrixError(NilmsetError):
    """Synthesis was given a window matrix with no rows."""


class DegenerateLayerError(NilmsetError):
    """Sparse initialization kept producing zero connections."""


class ShapeMismatchError(NilmsetError):
    """An input's shape is incompatible with the layer."""


class NoCachedForwardError(NilmsetError):
    """backward() was called without a preceding train-mode forward()."""


class NoVacantPositionsError(NilmsetError):
    """Evolution cannot place new connections: layer is fully connected."""


class InvalidSpecError(NilmsetError):
    """A model specification is internally inconsistent."""


class BatchTooSmallError(NilmsetError):
    """Batch normalization needs at least two samples in train mode."""


class InconsistentReportsError(NilmsetError):
    """Reports passed to the renderer disagree on epoch counts."""


class IncompleteGridError(NilmsetError):
    """The comparison table is missing one or more model/appliance cells."""

    def __init__(self, missing):
        self.missing = list(missing)
        super().__init__(f"missing grid cells: {', '.join(map(str, self.missing))}")


class DivergedLossError(Exception):
    """Training hit a non-finite loss. Carries the partial report."""

    def __init__(self, message: str, report=None):
        self.report = report
        super().__init__(message)
