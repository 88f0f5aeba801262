"""Exception types shared across the engine."""


class EngineError(Exception):
    """Base class for every error this package raises on purpose."""


class ShapeError(EngineError):
    """Operand shapes do not satisfy an operation's contract."""


class ConfigError(EngineError):
    """Invalid or inconsistent configuration values."""


class DegenerateRowError(EngineError):
    """A relation row has no support left to normalize over."""


class SamplingError(EngineError):
    """Temporal sampling asked for more frames than the video provides."""


class LabelError(EngineError):
    """A class label lies outside the configured range."""


class FormatError(EngineError):
    """A dataset or checkpoint file is malformed."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset
