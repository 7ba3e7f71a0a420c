"""Exceptions raised by wavenilm"""


class WaveNilmError(Exception):
    """Base class for all errors raised by this package"""


class ConfigError(WaveNilmError, ValueError):
    """Invalid experiment, network, training, or household configuration

    The message starts with the dotted name of the offending field.
    """


class DataError(WaveNilmError, ValueError):
    """Meter data which cannot be used (bad CSV, gaps, missing channels)"""


class ShapeError(WaveNilmError, ValueError):
    """Array shapes which do not fit a layer or an operation"""


class NonFiniteError(WaveNilmError, ValueError):
    """NaN or infinity found where only finite values are allowed"""


class MetricError(WaveNilmError, ValueError):
    """Metric which is undefined for the given data"""


class CheckpointError(WaveNilmError):
    """Checkpoint file which is missing, corrupted, or of unknown version"""


class TrainingDivergedError(WaveNilmError):
    """Loss became non-finite during training

    The network passed to training holds the last good parameters
    when this is raised.
    """

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history if history is not None else []
