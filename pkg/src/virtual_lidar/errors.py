"""Exception types raised across the package."""


class VirtualLidarError(Exception):
    """Base class for every error raised by this package."""


class DataError(VirtualLidarError):
    """Input data is malformed or inconsistent (CLI exit status 2)."""


class NonOrthonormalInput(DataError):
    pass


class FrameMismatch(VirtualLidarError):
    pass


class IndexOutOfRange(VirtualLidarError, IndexError):
    pass


class EmptyCloud(DataError):
    pass


class LengthMismatch(DataError, ValueError):
    pass


class DegenerateGround(DataError):
    pass


class DuplicateRay(VirtualLidarError):
    pass


class ZeroTotal(DataError, ValueError):
    pass


class ZeroVector(DataError, ValueError):
    pass


class TruncatedFile(DataError):
    pass


class IoFailure(DataError, OSError):
    pass


class SchemaError(DataError, ValueError):
    """Malformed JSON document; ``path`` names the offending field."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path


class ConfigError(DataError, ValueError):
    """Bad sensor configuration; carries the key and source line when known."""

    def __init__(self, message, key=None, line=None):
        where = []
        if key is not None:
            where.append(f"key '{key}'")
        if line is not None:
            where.append(f"line {line}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
        self.key = key
        self.line = line


class TargetNotFound(DataError, KeyError):
    def __str__(self):
        return Exception.__str__(self)
