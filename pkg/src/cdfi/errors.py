"""Exception hierarchy shared across the package."""


class CDFIError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(CDFIError, ValueError):
    """Tensor shapes are incompatible with the requested operation."""


class ConfigError(CDFIError, ValueError):
    """A configuration value is invalid or inconsistent."""


class NumericError(CDFIError, ArithmeticError):
    """A numerical operation produced or received a non-finite value."""


class DataError(CDFIError):
    """A dataset, log or image could not be read."""


class ImageParseError(DataError):
    """Malformed image file.

    ``offset`` is the byte position at which parsing failed.
    """

    def __init__(self, message, offset=None, path=None):
        self.offset = offset
        self.path = path
        where = []
        if path is not None:
            where.append(str(path))
        if offset is not None:
            where.append(f"byte {offset}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
