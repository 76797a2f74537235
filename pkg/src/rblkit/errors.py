"""Exception types shared across the package."""


class RblError(Exception):
    """Base class for all errors raised by rblkit."""


class ScenarioFormatError(RblError):
    """A scenario file or dictionary violates the documented schema."""


class DegenerateGeometryError(RblError):
    """Anchor or body geometry is too degenerate for estimation."""


class NumericalDegeneracyError(RblError):
    """An iterative solver produced a non-positive variance or similar."""
