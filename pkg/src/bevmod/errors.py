"""Exception types shared across the pipeline."""


class BevModError(Exception):
    """Base class for all pipeline errors."""


class MissingField(BevModError):
    """A required key is absent from a calibration or log file."""


class MalformedLine(BevModError):
    """A line has the wrong arity or a non-parseable value."""


class ParseError(BevModError):
    """A document is structurally invalid."""


class BadRotation(BevModError):
    """A rotation matrix is not orthonormal (or is a reflection)."""


class PoleSingularity(BevModError):
    """Latitude at or beyond +/-90 degrees; Mercator projection undefined."""


class MissingPose(BevModError):
    """An object track references a frame with no ego pose."""


class BadTimestamps(BevModError):
    """Timestamps are not strictly increasing."""


class DegeneratePoints(BevModError):
    """Three of the four homography correspondences are collinear."""


class HorizonPoint(BevModError):
    """A point maps to the line at infinity under a homography."""


class ShapeError(BevModError):
    """Tensor shapes are incompatible with the requested operation."""


class GridMismatch(BevModError):
    """Two grids do not share the same geometry."""


class EmptyEval(BevModError):
    """Metric requested on an empty accumulator."""


class Diverged(BevModError):
    """Training produced a non-finite loss."""
