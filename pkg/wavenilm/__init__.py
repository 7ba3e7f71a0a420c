"""Non-intrusive load monitoring with gated dilated causal convolutions"""

from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    MeterSeries,
    Scenario,
    build_scenario,
    ingest_csv,
    normalize,
    synthesize_household,
    window,
)
from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    MetricError,
    NonFiniteError,
    ShapeError,
    TrainingDivergedError,
    WaveNilmError,
)
from .metrics import AccuracyReport, estimated_accuracy
from .network import Network, NetworkConfig, build, predict_series, receptive_field
from .streaming import init_stream, stream
from .training import TrainConfig, cross_validate, loss, split, train

__all__ = [
    "AccuracyReport",
    "CheckpointError",
    "ConfigError",
    "DataError",
    "MeterSeries",
    "MetricError",
    "Network",
    "NetworkConfig",
    "NonFiniteError",
    "Scenario",
    "ShapeError",
    "TrainConfig",
    "TrainingDivergedError",
    "WaveNilmError",
    "build",
    "build_scenario",
    "cross_validate",
    "estimated_accuracy",
    "ingest_csv",
    "init_stream",
    "load_checkpoint",
    "loss",
    "normalize",
    "predict_series",
    "receptive_field",
    "save_checkpoint",
    "split",
    "stream",
    "synthesize_household",
    "train",
    "window",
]
