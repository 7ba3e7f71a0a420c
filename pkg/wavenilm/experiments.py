"""Run configured experiments and write their result files"""

import fnmatch
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .checkpoint import load_checkpoint
from .config import load_experiment, load_household, read_json, resolve_path
from .data import (
    DAY,
    MeterSeries,
    ScaleRecord,
    Scenario,
    build_scenario,
    denormalize,
    ingest_csv,
    ingest_signal_files,
    normalize_scenario,
    synthesize_household,
)
from .errors import CheckpointError, ConfigError, WaveNilmError
from .metrics import clamp_nonnegative, write_report_table
from .network import build
from .training import (
    EvaluationSet,
    TrainingData,
    cross_validate,
    evaluate,
    make_windows,
    predict,
    split,
    train,
)

logger = logging.getLogger(__name__)

MATRIX_SUBSETS = (("I",), ("P",), ("Q",), ("S",), ("P", "Q"), ("I", "P", "Q", "S"))


def is_json_file(path):
    """Return True if path is a JSON file"""
    path = Path(path)
    return path.is_file() and path.suffix == ".json"


def filename_matches_pattern(filename, patterns):
    """Return True if filename matches a pattern from patterns"""
    for pattern in patterns:
        if fnmatch.fnmatch(filename, pattern):
            return True
    return False


def load_series(experiment):
    """Meter data of an experiment, synthesized or read from CSV"""
    source = experiment.data
    if source.synthetic is not None:
        household = load_household(source.synthetic)
        return synthesize_household(
            household.appliances,
            days=source.days or household.days,
            voltage=household.voltage,
            noise_model=household.noise,
            seed=household.seed,
            start=household.start,
        )
    if source.signal_files is not None:
        series = ingest_signal_files(source.signal_files, source.meters)
    else:
        series = ingest_csv(source.csv, source.channel_map)
    if source.days is not None:
        series = series.slice(0, int(round(source.days * DAY)))
    return series


@dataclass(frozen=True)
class PreparedExperiment:
    """Normalized train and test parts of an experiment, ready for training"""

    experiment: object
    network_config: object
    scales: ScaleRecord
    train: object
    test: object
    training_data: TrainingData

    @property
    def scenario(self):
        return self.experiment.scenario

    @property
    def load_names(self):
        return list(self.scenario.target_loads)

    @property
    def output_scale(self):
        return self.scales.scale(self.scenario.output_signal)

    @property
    def region_start(self):
        return self.network_config.receptive_field

    def in_sample(self):
        return EvaluationSet(self.train.inputs, self.train.targets)

    def held_out(self):
        """Test part primed with the end of the train part"""
        context = min(len(self.train), self.region_start - 1)
        start = len(self.train) - context
        return EvaluationSet(
            inputs=np.concatenate([self.train.inputs[start:], self.test.inputs]),
            targets=np.concatenate([self.train.targets[start:], self.test.targets]),
            context=context,
        )

    def metadata(self):
        return {
            "title": self.experiment.title,
            "seed": self.experiment.seed,
            "scenario": self.scenario.to_dict(),
            "scales": self.scales.to_dict(),
            "load_names": self.load_names,
            "training": self.experiment.training.to_dict(),
        }


def prepare(experiment, series=None, scales=None):
    """Split, normalize and window the data of an experiment

    The tail of the series is held out for testing and the tail of the train
    part is used for validation. Scales come from the train part unless
    given.
    """
    if series is None:
        series = load_series(experiment)
    config = experiment.training
    network_config = experiment.network_config()
    region_start = config.region_start_for(network_config)
    train_series, test_series = split(
        series, config.train_fraction, config.window_length
    )
    train_data, scales = normalize_scenario(
        build_scenario(train_series, experiment.scenario), scales
    )
    test_data, unused = normalize_scenario(
        build_scenario(test_series, experiment.scenario), scales
    )

    fit = train_data
    validation = None
    validation_length = int(len(train_data) * config.validation_fraction)
    if validation_length:
        fit_length = len(train_data) - validation_length
        if fit_length >= config.window_length:
            fit = train_data.slice(0, fit_length)
            context = min(fit_length, region_start - 1)
            validation = EvaluationSet(
                inputs=train_data.inputs[fit_length - context :],
                targets=train_data.targets[fit_length - context :],
                context=context,
            )
        else:
            logger.warning(
                "train part too short for a validation tail, validating on nothing"
            )
    windows_inputs, windows_targets = make_windows(
        [fit], config.window_length, region_start - 1
    )
    logger.info(
        "%s: %d training windows, %d test samples",
        experiment.title,
        len(windows_inputs),
        len(test_data),
    )
    return PreparedExperiment(
        experiment=experiment,
        network_config=network_config,
        scales=scales,
        train=train_data,
        test=test_data,
        training_data=TrainingData(windows_inputs, windows_targets, validation),
    )


def write_config_echo(path, experiment):
    with open(path, mode="w", encoding="utf-8") as out:
        json.dump(experiment.to_dict(), out, indent=2, sort_keys=True)
        out.write("\n")


def run_training(experiment, out_dir, series=None):
    """Train an experiment into out_dir; returns (network, history, prepared)"""
    out_dir = Path(out_dir)
    prepared = prepare(experiment, series)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_config_echo(out_dir / "config.json", experiment)
    network = build(prepared.network_config, seed=experiment.seed)
    network, history = train(
        network,
        prepared.training_data,
        experiment.training,
        run_dir=out_dir,
        metadata=prepared.metadata(),
    )
    return network, history, prepared


def score_held_out(network, prepared):
    return evaluate(
        network,
        prepared.held_out(),
        prepared.output_scale,
        prepared.load_names,
        prepared.region_start,
    )


def write_predictions(path, network, prepared):
    """Clamped held-out predictions in physical units, one column per load"""
    predictions = denormalize(
        predict(network, prepared.held_out()),
        (prepared.scenario.output_signal,),
        prepared.scales,
    )
    frame = pd.DataFrame(
        clamp_nonnegative(predictions),
        columns=prepared.scenario.output_columns,
        index=prepared.test.timestamps,
    )
    MeterSeries(frame).to_csv(path)


def run_evaluation(experiment, checkpoint, out_dir):
    """Score a checkpoint on the train and test parts of an experiment

    The scenario and scales stored in the checkpoint take precedence over the
    configuration. Writes report.txt, report.csv and predictions.csv.
    """
    network, metadata = load_checkpoint(checkpoint)
    try:
        scenario = Scenario.from_dict(metadata["scenario"])
        scales = ScaleRecord.from_dict(metadata["scales"])
    except (KeyError, TypeError, AttributeError):
        raise CheckpointError(
            f"{checkpoint}: no scenario and scales in the checkpoint metadata"
        ) from None
    if scenario != experiment.scenario:
        logger.warning("using the scenario stored in %s", checkpoint)
        experiment = experiment.with_scenario(scenario)
    if network.config != experiment.network_config():
        logger.warning("network in %s differs from the configured one", checkpoint)
    experiment = experiment.with_network(network.config)
    prepared = prepare(experiment, scales=scales)
    reports = {
        "train": evaluate(
            network,
            prepared.in_sample(),
            prepared.output_scale,
            prepared.load_names,
            prepared.region_start,
        ),
        "test": score_held_out(network, prepared),
    }
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.txt").write_text(reports["test"].to_text(), encoding="utf-8")
    write_report_table(
        out_dir / "report.csv",
        [report.to_row(part=part) for part, report in reports.items()],
    )
    write_predictions(out_dir / "predictions.csv", network, prepared)
    return reports


def matrix_scenario(scenario, signals):
    """Scenario of one matrix cell: same loads and mode, other input signals"""
    if len(signals) == 1:
        output = signals[0]
    elif scenario.output_signal in signals:
        output = scenario.output_signal
    else:
        output = "P"
    return Scenario(
        mode=scenario.mode,
        target_loads=scenario.target_loads,
        input_signals=signals,
        output_signal=output,
    )


def run_matrix(experiment, out_dir):
    """Train and score every input-signal combination; writes matrix.csv

    Cell i uses the seed experiment.seed + i.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    series = load_series(experiment)
    rows = []
    for index, signals in enumerate(MATRIX_SUBSETS):
        label = "+".join(signals)
        cell = experiment.with_scenario(
            matrix_scenario(experiment.scenario, signals)
        ).with_seed(experiment.seed + index)
        labels = {
            "inputs": label,
            "output_signal": cell.scenario.output_signal,
            "mode": cell.scenario.mode,
            "seed": cell.seed,
        }
        try:
            network, history, prepared = run_training(
                cell, out_dir / "cells" / "_".join(signals), series
            )
            report = score_held_out(network, prepared)
        except WaveNilmError as error:
            logger.warning("matrix cell %s failed: %s", label, error)
            rows.append(dict(labels, error=str(error)))
            continue
        logger.info(
            "%s: estimated accuracy %.4f", label, report.estimated_accuracy_total
        )
        rows.append(report.to_row(epochs=len(history), **labels))
    write_report_table(out_dir / "matrix.csv", rows)
    return rows


def run_cross_validation(experiment, folds, out_dir):
    """k-fold cross-validation over the whole series; writes folds.csv

    Each fold is normalized with scales from its own training samples.
    """
    data = build_scenario(load_series(experiment), experiment.scenario)
    network_config = experiment.network_config()
    result = cross_validate(
        lambda seed: build(network_config, seed=seed),
        data,
        k=folds,
        config=experiment.training,
        load_names=list(experiment.scenario.target_loads),
    )
    if result.mean is None:
        raise WaveNilmError(f"all {folds} cross-validation folds failed")
    failed = {fold for fold, unused in result.failures}
    passed = [fold for fold in range(folds) if fold not in failed]
    rows = [
        report.to_row(fold=str(fold + 1))
        for fold, report in zip(passed, result.reports)
    ]
    rows.append(result.mean.to_row(fold="mean"))
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_report_table(out_dir / "folds.csv", rows)
    return result


def run_suite(config_file, out_dir, exclude=None, seed=None):
    """Train and score every experiment in the directory named by config_file

    The main configuration names the directory in `includeTasks`; other JSON
    files there are experiments. Writes summary.csv with one row each.
    """
    main_config = read_json(config_file)
    if "includeTasks" not in main_config:
        raise ConfigError("includeTasks: main configuration needs a directory")
    path = resolve_path(main_config["includeTasks"], config_file)
    if not path.is_dir():
        raise ConfigError(f"includeTasks: {path} is not a directory")
    out_dir = Path(out_dir)

    rows = []
    for json_file in sorted(path.iterdir()):
        if not is_json_file(json_file):
            continue
        if json_file.samefile(config_file):
            continue
        if exclude and filename_matches_pattern(str(json_file), exclude):
            continue
        experiment = load_experiment(json_file)
        if seed is not None:
            experiment = experiment.with_seed(seed)
        labels = {"experiment": json_file.stem, "title": experiment.title}
        try:
            network, history, prepared = run_training(
                experiment, out_dir / json_file.stem
            )
            report = score_held_out(network, prepared)
        except WaveNilmError as error:
            logger.warning("experiment %s failed: %s", json_file.stem, error)
            rows.append(dict(labels, error=str(error)))
            continue
        rows.append(report.to_row(epochs=len(history), **labels))
    if not rows:
        raise ConfigError(f"includeTasks: no experiments found in {path}")
    out_dir.mkdir(parents=True, exist_ok=True)
    write_report_table(out_dir / "summary.csv", rows)
    return rows
