"""Exception hierarchy.

Every error raised for bad *data* derives from :class:`LidarSegError`; the CLI
maps those to exit code 2. Argument/config problems derive from
:class:`ConfigError` and map to exit code 1.
"""


class LidarSegError(Exception):
    """Base class for data errors."""


class ConfigError(ValueError):
    """Invalid configuration or parameter block."""


class MalformedFrameError(LidarSegError):
    pass


class MalformedPointError(LidarSegError):
    def __init__(self, index: int, message: str = ""):
        self.index = index
        super().__init__(message or f"non-finite component in point {index}")


class LabelParseError(LidarSegError):
    def __init__(self, line_number: int, message: str):
        self.line_number = line_number
        super().__init__(f"line {line_number}: {message}")


class CalibrationError(LidarSegError):
    pass


class MissingCalibrationError(CalibrationError):
    pass


class InsufficientPointsError(LidarSegError):
    pass


class DegenerateGeometryError(LidarSegError):
    pass


class EmptyInputError(LidarSegError):
    pass


class EmptyClusterError(LidarSegError):
    pass


class EmptyDataError(LidarSegError):
    pass


class ImbalanceError(LidarSegError):
    pass


class ArityError(LidarSegError):
    pass


class ModelFormatError(LidarSegError):
    pass


class UndefinedMetricError(LidarSegError):
    pass
