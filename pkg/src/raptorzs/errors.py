"""Exception types raised across the package."""


class RaptorError(Exception):
    """Base class for all package errors."""


class RasterFormatError(RaptorError):
    """An RTIL file is malformed or was written inconsistently."""


class IntersectionFormatError(RaptorError):
    """An intersection file has a bad trailer, footer or record block."""


class VectorParseError(RaptorError):
    """A vector input could not be parsed."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class MalformedPolygonError(RaptorError):
    """A polygon produced an odd number of scanline crossings on some row."""

    def __init__(self, pid, y):
        self.pid = pid
        self.y = y
        super().__init__(f"polygon {pid} has odd crossing parity on row {y}")


class CorruptionError(RaptorError):
    """An intersection record points outside the tile it claims to belong to."""


class MaskTooLargeError(RaptorError):
    """RDA mask for one polygon exceeds the configured memory cap."""
