class AlsegError(Exception):
    """Base class for all package errors."""


class ShapeError(AlsegError, ValueError):
    pass


class ParameterError(AlsegError, ValueError):
    pass


class LabelError(AlsegError, ValueError):
    pass


class DataError(AlsegError, ValueError):
    pass


class StateError(AlsegError, RuntimeError):
    pass


class ExhaustedError(AlsegError, LookupError):
    """Raised when sampling without replacement has used up the space."""
