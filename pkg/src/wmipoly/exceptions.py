"""Exception hierarchy.

Every error carries an ``exit_code`` so the command line can map failures
onto its documented status codes without a lookup table.
"""


class WMIError(Exception):
    exit_code = 1


class ParseError(WMIError, ValueError):
    """Malformed input text. ``line`` and ``column`` are 1-based."""

    exit_code = 2

    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        if line is not None:
            message = f"{message} (line {line}, column {column})"
        super().__init__(message)


class DimensionError(WMIError, ValueError):
    exit_code = 2


class GeometryError(WMIError):
    exit_code = 3


class Unbounded(GeometryError):
    pass


class EmptyPolytope(GeometryError):
    pass


class Degenerate(GeometryError):
    pass


class BadBarycentric(GeometryError, ValueError):
    pass


class DecompositionError(GeometryError):
    pass


class TooManyRegions(DecompositionError):
    pass


class EmptyConditional(DecompositionError):
    pass


class GenerationStalled(WMIError):
    exit_code = 3


class NumericError(WMIError):
    exit_code = 4


class DegreeMismatch(NumericError, ValueError):
    pass


class ZeroMass(NumericError):
    pass


class ZeroConditionalMass(NumericError):
    pass


class NonFiniteLoss(NumericError):
    pass


class DataViolatesConstraint(WMIError, ValueError):
    exit_code = 4

    def __init__(self, indices):
        self.indices = list(indices)
        shown = ", ".join(map(str, self.indices[:20]))
        more = "" if len(self.indices) <= 20 else f" ... ({len(self.indices)} total)"
        super().__init__(f"data rows violate the constraint: {shown}{more}")


class LengthMismatch(DimensionError):
    pass


class DegreeCap(NumericError, ValueError):
    pass
