class GffPercError(Exception):
    """Base class for all domain errors raised by gffperc."""


class GraphFormatError(GffPercError):
    pass


class GenerationError(GffPercError):
    pass


class AssumptionError(GffPercError):
    """A graph or geometric assumption needed by an operation does not hold."""


class UnsupportedStructureError(GffPercError):
    pass


class GeometryError(GffPercError):
    pass


class BracketError(GffPercError):
    pass


class CheckFailed(GffPercError):
    """An assertion-style check of a bound or of an equality in law failed."""
