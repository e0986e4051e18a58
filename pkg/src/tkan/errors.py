"""Exception hierarchy shared across the package."""


class TkanError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(TkanError, ValueError):
    """Array dimensions do not conform."""


class NonFiniteError(TkanError, ValueError):
    """A value that must be finite is NaN or infinite."""


class GridError(TkanError, ValueError):
    """Invalid spline grid specification or basis index."""


class CacheError(TkanError, RuntimeError):
    """A backward pass was given a missing or mismatched forward cache."""


class RngError(TkanError, ValueError):
    """Invalid sampling range."""


class ConfigError(TkanError, ValueError):
    """Invalid model or training configuration."""


class CheckpointError(TkanError):
    """Base class for checkpoint read/write failures."""


class CheckpointVersionError(CheckpointError):
    pass


class CorruptCheckpointError(CheckpointError):
    pass


class CheckpointMismatchError(CheckpointError):
    """Checkpoint content does not match the expected configuration."""


class DataError(TkanError):
    """Base class for data ingestion failures."""


class EmptyDataError(DataError):
    pass


class FieldCountError(DataError):
    def __init__(self, message, sample=None):
        super().__init__(message)
        self.sample = sample


class ParseError(DataError):
    def __init__(self, message, line=None, column=None):
        super().__init__(message)
        self.line = line
        self.column = column


class InsufficientDataError(DataError):
    pass


class MissingHorizonError(DataError):
    pass


class ClassWeightError(TkanError, ValueError):
    """A class has zero support, so inverse-frequency weights are undefined."""


class LabelError(TkanError, ValueError):
    pass


class DivergenceError(TkanError, ArithmeticError):
    def __init__(self, message, epoch=None, step=None):
        super().__init__(message)
        self.epoch = epoch
        self.step = step


class NonFiniteGradientError(NonFiniteError):
    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class SignalError(TkanError, ValueError):
    """Rank correlation is undefined for constant or too-short inputs."""


class BacktestError(TkanError, ValueError):
    pass
