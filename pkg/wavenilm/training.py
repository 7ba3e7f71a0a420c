"""Training: windowed minibatches, post-warmup loss, splits, cross-validation

Windows are one day long and overlap by receptive_field - 1 samples. The loss
skips the first samples of every window, whose receptive field would reach
before the window start; loss_region_start counts samples from 1, so the
default 512 scores samples 512 to 1440.
"""

import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import pandas as pd

from .checkpoint import save_checkpoint
from .data import DAY, ScenarioData, compute_scales, normalize_scenario, window
from .errors import (
    ConfigError,
    DataError,
    NonFiniteError,
    ShapeError,
    TrainingDivergedError,
    WaveNilmError,
)
from .metrics import clamp_nonnegative, estimated_accuracy, mean_report
from .network import predict_series

logger = logging.getLogger(__name__)

EPOCH_BUDGETS = {"full": 500, "deferrable": 300}


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings; loss_region_start defaults to the receptive field"""

    batch_size: int = 50
    max_epochs: int = EPOCH_BUDGETS["full"]
    loss_region_start: int = None
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0
    patience: int = 20
    window_length: int = DAY
    train_fraction: float = 0.9
    validation_fraction: float = 0.1

    def __post_init__(self):
        for item in fields(self):
            value = getattr(self, item.name)
            if value is None and item.name == "loss_region_start":
                continue
            kinds = (int,) if item.type is int else (int, float)
            if isinstance(value, bool) or not isinstance(value, kinds):
                kind = "an integer" if item.type is int else "a number"
                raise ConfigError(
                    f"training.{item.name}: must be {kind}, got {value!r}"
                )
        if self.batch_size < 1:
            raise ConfigError("training.batch_size: must be at least 1")
        if self.max_epochs < 0:
            raise ConfigError("training.max_epochs: must not be negative")
        if self.learning_rate < 0:
            raise ConfigError("training.learning_rate: must not be negative")
        if self.patience < 1:
            raise ConfigError("training.patience: must be at least 1")
        if self.window_length < 1:
            raise ConfigError("training.window_length: must be at least 1")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError("training.train_fraction: must be in (0, 1)")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ConfigError("training.validation_fraction: must be in [0, 1)")

    @classmethod
    def for_load_set(cls, load_set, **overrides):
        """Defaults with the epoch budget of "full" or "deferrable" disaggregation"""
        try:
            budget = EPOCH_BUDGETS[load_set]
        except KeyError:
            raise ConfigError(
                f"training.load_set: unknown load set '{load_set}',"
                f" use one of {', '.join(EPOCH_BUDGETS)}"
            ) from None
        overrides.setdefault("max_epochs", budget)
        return cls(**overrides)

    @classmethod
    def from_dict(cls, values, prefix="training"):
        values = dict(values)
        load_set = values.pop("load_set", None)
        known = {item.name for item in fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigError(f"{prefix}.{unknown[0]}: unknown training setting")
        if load_set is not None:
            return cls.for_load_set(load_set, **values)
        return cls(**values)

    def to_dict(self):
        return asdict(self)

    def region_start_for(self, network):
        """loss_region_start resolved against the network receptive field"""
        field_size = network.receptive_field
        start = field_size if self.loss_region_start is None else self.loss_region_start
        if start != field_size:
            raise ConfigError(
                f"training.loss_region_start: {start} differs from the receptive"
                f" field {field_size}"
            )
        if start > self.window_length:
            raise ConfigError(
                f"training.window_length: {self.window_length} is shorter than"
                f" the receptive field {field_size}"
            )
        return start


def _region_slice(predictions, targets, region_start):
    predictions = np.asarray(predictions)
    targets = np.asarray(targets)
    if predictions.shape != targets.shape:
        raise ShapeError(
            f"predictions have shape {predictions.shape},"
            f" targets have shape {targets.shape}"
        )
    length = predictions.shape[-2]
    if region_start < 1 or region_start > length:
        raise ShapeError(
            f"loss region starting at sample {region_start} is empty for"
            f" windows of {length} samples"
        )
    return (Ellipsis, slice(region_start - 1, None), slice(None))


def loss(predictions, targets, region_start=512):
    """Mean squared error over samples region_start.. (counted from 1)"""
    region = _region_slice(predictions, targets, region_start)
    difference = np.asarray(predictions)[region] - np.asarray(targets)[region]
    return float(np.mean(difference * difference))


def loss_and_gradient(predictions, targets, region_start=512):
    """Loss value and its gradient with respect to the predictions

    The gradient is zero outside the loss region.
    """
    region = _region_slice(predictions, targets, region_start)
    predictions = np.asarray(predictions)
    targets = np.asarray(targets, dtype=predictions.dtype)
    difference = predictions[region] - targets[region]
    grad = np.zeros_like(predictions)
    grad[region] = 2.0 * difference / difference.size
    return float(np.mean(difference * difference)), grad


class Adam:
    """Adaptive-moment gradient descent updating parameters in place"""

    def __init__(
        self, parameters, learning_rate=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8
    ):
        self.parameters = parameters
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.first = {name: np.zeros_like(value) for name, value in parameters.items()}
        self.second = {name: np.zeros_like(value) for name, value in parameters.items()}
        self.steps = 0

    def step(self, grads):
        self.steps += 1
        first_correction = 1.0 - self.beta1**self.steps
        second_correction = 1.0 - self.beta2**self.steps
        for name, values in self.parameters.items():
            grad = grads[name]
            first = self.first[name]
            second = self.second[name]
            first *= self.beta1
            first += (1.0 - self.beta1) * grad
            second *= self.beta2
            second += (1.0 - self.beta2) * grad * grad
            update = (first / first_correction) / (
                np.sqrt(second / second_correction) + self.epsilon
            )
            values -= self.learning_rate * update


@dataclass(frozen=True)
class EvaluationSet:
    """Normalized series to score, optionally preceded by context samples

    The first *context* samples only prime the network and are not scored.
    """

    inputs: np.ndarray
    targets: np.ndarray
    context: int = 0


@dataclass(frozen=True)
class TrainingData:
    windows_inputs: np.ndarray
    windows_targets: np.ndarray
    validation: EvaluationSet = None


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    validation_loss: float
    validation_accuracy: float
    seconds: float


def history_frame(history):
    return pd.DataFrame(
        [asdict(record) for record in history],
        columns=[item.name for item in fields(EpochRecord)],
    )


def write_history(path, history):
    """Per-epoch CSV; wall time is left out so identical runs give identical files"""
    history_frame(history).drop(columns="seconds").to_csv(
        path, index=False, lineterminator="\n"
    )


def make_windows(pieces, window_length, overlap):
    """Windows from one or more contiguous ScenarioData pieces

    Pieces shorter than a window are skipped; windows never span two pieces.
    """
    inputs = []
    targets = []
    for piece in pieces:
        if len(piece) < window_length:
            logger.info(
                "skipping a piece of %d samples, shorter than a window", len(piece)
            )
            continue
        inputs.append(window(piece.inputs, window_length, overlap))
        targets.append(window(piece.targets, window_length, overlap))
    if not inputs:
        raise DataError(f"no training data long enough for a window of {window_length}")
    return np.concatenate(inputs), np.concatenate(targets)


def predict(network, evaluation, chunk_length=4096):
    """Normalized predictions for the scored part of an evaluation set"""
    outputs = predict_series(network, evaluation.inputs, chunk_length=chunk_length)
    return outputs[evaluation.context :]


def evaluate(network, evaluation, scale=1.0, load_names=None, region_start=1):
    """Estimated Accuracy of clamped predictions in physical units

    Without context the first region_start - 1 samples lack a full receptive
    field and are not scored.
    """
    predictions = predict(network, evaluation)
    targets = evaluation.targets[evaluation.context :]
    skip = 0 if evaluation.context else max(region_start - 1, 0)
    predictions = clamp_nonnegative(predictions[skip:] * scale)
    return estimated_accuracy(predictions, targets[skip:] * scale, load_names)


def _validation_scores(network, validation, region_start):
    predictions = predict(network, validation)
    targets = validation.targets[validation.context :]
    skip = 0 if validation.context else max(region_start - 1, 0)
    predictions = predictions[skip:]
    targets = targets[skip:]
    difference = predictions - targets
    value = float(np.mean(difference * difference))
    accuracy = estimated_accuracy(clamp_nonnegative(predictions), targets)
    return value, accuracy.estimated_accuracy_total


def train(network, data, config, run_dir=None, metadata=None):
    """Train *network* in place; returns (network, history)

    Windows are shuffled every epoch with a generator seeded from
    config.seed, dropout draws from a second generator of the same seed, so
    a run is reproducible. The parameters with the best validation Estimated
    Accuracy (or the lowest training loss without validation data) are kept,
    and training stops after config.patience epochs without improvement.
    With *run_dir*, the history and best/final checkpoints are written there.
    A non-finite loss restores the best parameters and raises
    TrainingDivergedError.
    """
    region_start = config.region_start_for(network)
    inputs = np.asarray(data.windows_inputs, dtype=network.dtype)
    targets = np.asarray(data.windows_targets, dtype=network.dtype)
    if len(inputs) == 0:
        raise DataError("no training windows")
    if not (np.all(np.isfinite(inputs)) and np.all(np.isfinite(targets))):
        raise NonFiniteError("training windows contain NaN or infinite values")
    if run_dir is not None:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
    shuffle_seed, dropout_seed = np.random.SeedSequence(config.seed).spawn(2)
    shuffle_rng = np.random.default_rng(shuffle_seed)
    dropout_rng = np.random.default_rng(dropout_seed)
    optimizer = Adam(
        network.parameters(),
        learning_rate=config.learning_rate,
        beta1=config.beta1,
        beta2=config.beta2,
        epsilon=config.epsilon,
    )

    history = []
    best_params = network.copy_parameters()
    best_score = -np.inf
    stale_epochs = 0
    for epoch in range(1, config.max_epochs + 1):
        started = time.perf_counter()
        order = shuffle_rng.permutation(len(inputs))
        loss_sum = 0.0
        for first in range(0, len(order), config.batch_size):
            batch = order[first : first + config.batch_size]
            try:
                outputs, cache = network.forward_train(
                    inputs[batch], training=True, rng=dropout_rng
                )
                value, output_grad = loss_and_gradient(
                    outputs, targets[batch], region_start
                )
            except NonFiniteError:
                value = float("nan")
            if not np.isfinite(value):
                network.set_parameters(best_params)
                if run_dir is not None:
                    save_checkpoint(run_dir / "final.ckpt", network, metadata)
                raise TrainingDivergedError(
                    f"loss became non-finite in epoch {epoch}", history=history
                )
            unused, grads = network.backward(cache, output_grad)
            optimizer.step(grads)
            loss_sum += value * len(batch)
        train_loss = loss_sum / len(order)

        if data.validation is not None:
            validation_loss, validation_accuracy = _validation_scores(
                network, data.validation, region_start
            )
            score = validation_accuracy
        else:
            validation_loss = validation_accuracy = float("nan")
            score = -train_loss
        history.append(
            EpochRecord(
                epoch=epoch,
                train_loss=train_loss,
                validation_loss=validation_loss,
                validation_accuracy=validation_accuracy,
                seconds=time.perf_counter() - started,
            )
        )
        logger.info(
            "epoch %d: train loss %.6g, validation accuracy %.4f",
            epoch,
            train_loss,
            validation_accuracy,
        )
        if score > best_score:
            best_score = score
            best_params = network.copy_parameters()
            stale_epochs = 0
            if run_dir is not None:
                save_checkpoint(run_dir / "best.ckpt", network, metadata)
        else:
            stale_epochs += 1
        if run_dir is not None:
            write_history(run_dir / "history.csv", history)
        if stale_epochs >= config.patience:
            logger.info("no improvement for %d epochs, stopping", stale_epochs)
            break

    if run_dir is not None:
        save_checkpoint(run_dir / "final.ckpt", network, metadata)
        if not history:
            save_checkpoint(run_dir / "best.ckpt", network, metadata)
            write_history(run_dir / "history.csv", history)
    network.set_parameters(best_params)
    return network, history


def split(series, train_fraction=0.9, window_length=DAY):
    """Contiguous split: the tail is held out, nothing is shuffled across time"""
    length = len(series)
    if length < 10 * window_length:
        raise DataError(
            f"series of {length} samples is shorter than 10 windows"
            f" of {window_length}"
        )
    if not 0.0 < train_fraction < 1.0:
        raise ConfigError("training.train_fraction: must be in (0, 1)")
    boundary = int(length * train_fraction)
    return series.slice(0, boundary), series.slice(boundary, length)


@dataclass(frozen=True)
class FoldPlan:
    """Contiguous test span of one fold"""

    k: int
    fold: int
    test_start: int
    test_stop: int


def fold_plans(length, k=10):
    """Test spans that tile [0, length) exactly once"""
    if k < 2:
        raise ConfigError(f"crossval.folds: must be at least 2, got {k}")
    if length < k:
        raise DataError(f"cannot make {k} folds from {length} samples")
    bounds = [fold * length // k for fold in range(k + 1)]
    return [
        FoldPlan(k=k, fold=fold, test_start=bounds[fold], test_stop=bounds[fold + 1])
        for fold in range(k)
    ]


@dataclass(frozen=True)
class CrossValidationResult:
    reports: list
    mean: object
    failures: list
    scales: list = field(default_factory=list)


def fold_scales(data, plan):
    """Scales from the samples outside the test span of *plan*"""
    outside = np.concatenate(
        [data.inputs[: plan.test_start], data.inputs[plan.test_stop :]]
    )
    return compute_scales(outside, data.scenario.input_signals)


def cross_validate(net_builder, data, k=10, config=None, load_names=None):
    """k-fold cross-validation over a ScenarioData timeline in physical units

    Every fold normalizes the timeline with scales from its training samples,
    builds a fresh network with net_builder(config.seed), trains on the
    samples outside the test span (without validation data) and scores the
    test span, primed with the samples preceding it. A failing fold is logged
    and recorded in failures; the other folds still run.
    """
    config = config or TrainConfig()
    if not isinstance(data, ScenarioData):
        raise ShapeError("cross-validation needs ScenarioData")
    reports = []
    failures = []
    scales = []
    for plan in fold_plans(len(data), k):
        try:
            record = fold_scales(data, plan)
            normalized, unused = normalize_scenario(data, record)
            network = net_builder(config.seed)
            region_start = config.region_start_for(network)
            pieces = [
                normalized.slice(0, plan.test_start),
                normalized.slice(plan.test_stop, len(normalized)),
            ]
            windows_inputs, windows_targets = make_windows(
                pieces, config.window_length, region_start - 1
            )
            train(network, TrainingData(windows_inputs, windows_targets), config)
            context = min(plan.test_start, region_start - 1)
            evaluation = EvaluationSet(
                inputs=normalized.inputs[plan.test_start - context : plan.test_stop],
                targets=normalized.targets[plan.test_start - context : plan.test_stop],
                context=context,
            )
            scale = record.scale(data.scenario.output_signal)
            report = evaluate(network, evaluation, scale, load_names, region_start)
        except WaveNilmError as error:
            logger.warning("fold %d of %d failed: %s", plan.fold + 1, k, error)
            failures.append((plan.fold, error))
            continue
        logger.info(
            "fold %d of %d: estimated accuracy %.4f",
            plan.fold + 1,
            k,
            report.estimated_accuracy_total,
        )
        reports.append(report)
        scales.append(record)
    mean = mean_report(reports) if reports else None
    return CrossValidationResult(
        reports=reports, mean=mean, failures=failures, scales=scales
    )
