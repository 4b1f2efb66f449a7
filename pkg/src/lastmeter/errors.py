"""Exception types raised across the package."""


class LastMeterError(Exception):
    """Base class for all package errors."""


class TooFewPoints(LastMeterError):
    pass


class DegenerateConfiguration(LastMeterError):
    pass


class EmptyInput(LastMeterError, ValueError):
    pass


class ShapeMismatch(LastMeterError, ValueError):
    pass


class OutOfFov(LastMeterError, ValueError):
    pass


class PoseOutsideGrid(LastMeterError):
    pass


class PoseOutsideWorld(PoseOutsideGrid):
    pass


class NonpositiveDistance(LastMeterError, ValueError):
    pass


class NoFreeSource(LastMeterError):
    pass


class NoViableWaypoint(LastMeterError):
    pass


class TooFewFrames(LastMeterError):
    pass


class InsufficientBaseline(LastMeterError):
    pass


class EmptyFrames(LastMeterError):
    pass


class ConfigError(LastMeterError, ValueError):
    pass
