"""Exception types raised across the package."""


class ShapeServoError(Exception):
    """Base class for all package errors."""


class CoincidentPoints(ShapeServoError, ValueError):
    pass


class DegenerateTwist(ShapeServoError, ValueError):
    pass


class BadMarkers(ShapeServoError, IndexError):
    pass


class NearSingularFeature(ShapeServoError, ValueError):
    pass


class OutOfRange(ShapeServoError, ValueError):
    pass


class VelocityLimit(ShapeServoError, ValueError):
    """Commanded actuator velocity exceeds the plant limit (a controller bug)."""


class DimensionMismatch(ShapeServoError, ValueError):
    pass


class BadRange(ShapeServoError, ValueError):
    pass


class NonFinite(ShapeServoError, FloatingPointError):
    pass


class IllConditionedFit(ShapeServoError, ArithmeticError):
    pass


class EmptyTrace(ShapeServoError, ValueError):
    pass


class PlantFault(ShapeServoError, RuntimeError):
    pass


class ConfigError(ShapeServoError, ValueError):
    pass
