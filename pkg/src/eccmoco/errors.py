"""Exception types raised across the toolkit."""


class ToolkitError(Exception):
    """Base class for all toolkit errors."""


class DegenerateMatrix(ToolkitError):
    """Projection matrix has rank below 3."""


class DegenerateBaseline(ToolkitError):
    """The two source positions coincide; no epipolar geometry exists."""


class LineAtInfinity(ToolkitError):
    """Homogeneous line has vanishing direction part (l1 = l2 = 0)."""


class InvalidGrid(ToolkitError):
    """Radon table grid counts violate their preconditions."""


class LengthMismatch(ToolkitError):
    """Parallel input sequences differ in length."""


class OutOfDomain(ToolkitError):
    """Spline query point lies outside the node range."""


class NonMonotonicNodes(ToolkitError):
    """Spline node positions are not strictly increasing."""


class DimensionMismatch(ToolkitError):
    """Optimizer configuration does not match the dimension of x0."""


class UnknownPreset(ToolkitError):
    """No phantom preset registered under the requested name."""


class InvalidGeometry(ToolkitError):
    """Scan geometry violates its invariants (e.g. short-scan condition)."""


class ShapeMismatch(ToolkitError):
    """Volumes have different shapes."""


class GridOutsideFov(ToolkitError):
    """Requested reconstruction grid is not fully inside the field of view."""


class ConfigError(ToolkitError):
    """Configuration file could not be parsed or validated."""

    def __init__(self, message, path=None, line=None):
        loc = ""
        if path is not None:
            loc = f"{path}:"
            if line is not None:
                loc += f"{line}:"
            loc += " "
        super().__init__(loc + message)
        self.path = path
        self.line = line
