"""Exception hierarchy shared by every module."""


class PcaeError(Exception):
    """Base class for all package errors."""


class InvalidInput(PcaeError, ValueError):
    pass


class ShapeError(PcaeError, ValueError):
    pass


class StaleTapeError(PcaeError, RuntimeError):
    """Raised when backward() is called twice on the same recorded graph."""


class CheckpointError(PcaeError):
    pass


class NumericalAbort(PcaeError, FloatingPointError):
    """Training produced a non-finite loss."""
