#!/usr/bin/env python3

"""Train, evaluate, and run disaggregation networks from the command line"""

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint
from .config import load_experiment, load_household
from .data import (
    ScaleRecord,
    Scenario,
    denormalize,
    noise_fraction,
    synthesize_household,
)
from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    MetricError,
    ShapeError,
)
from .experiments import (
    run_cross_validation,
    run_evaluation,
    run_matrix,
    run_suite,
    run_training,
)
from .metrics import clamp_nonnegative
from .network import build
from .numcore import parameter_count
from .streaming import init_stream

logger = logging.getLogger(__name__)

LOG_LEVEL_VARIABLE = "WAVENILM_LOG_LEVEL"
USER_ERRORS = (ConfigError, DataError, CheckpointError, MetricError)
DEFAULT_RUNS = Path("runs")


class ArgumentParser(argparse.ArgumentParser):
    """Argument parser reporting usage errors with exit code 1"""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def configure_logging(verbosity):
    """Set the root log level from -v flags or the environment"""
    if verbosity:
        level = "INFO" if verbosity == 1 else "DEBUG"
    else:
        level = os.environ.get(LOG_LEVEL_VARIABLE, "WARNING").upper()
    numeric = logging.getLevelName(level)
    if not isinstance(numeric, int):
        raise ConfigError(f"{LOG_LEVEL_VARIABLE}: unknown log level '{level}'")
    logging.basicConfig(format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger().setLevel(numeric)


def experiment_from_args(args):
    experiment = load_experiment(args.config)
    if args.seed is not None:
        experiment = experiment.with_seed(args.seed)
    return experiment


def run_directory(args, *parts):
    if args.out is not None:
        return Path(args.out)
    return DEFAULT_RUNS.joinpath(Path(args.config).stem, *parts)


def stored_scenario(metadata, checkpoint):
    try:
        return (
            Scenario.from_dict(metadata["scenario"]),
            ScaleRecord.from_dict(metadata["scales"]),
        )
    except (KeyError, TypeError, AttributeError):
        raise CheckpointError(
            f"{checkpoint}: no scenario and scales in the checkpoint metadata"
        ) from None


def cmd_train(args):
    experiment = experiment_from_args(args)
    out_dir = run_directory(args)
    history = run_training(experiment, out_dir)[1]
    scores = [record.validation_accuracy for record in history]
    print(f"run directory: {out_dir}")
    print(f"epochs: {len(history)}")
    if scores and np.any(np.isfinite(scores)):
        print(f"best validation accuracy: {np.nanmax(scores):.4f}")
    return 0


def cmd_eval(args):
    experiment = experiment_from_args(args)
    if args.matrix:
        out_dir = run_directory(args, "matrix")
        rows = run_matrix(experiment, out_dir)
        for row in rows:
            score = row.get("estimated_accuracy_total", float("nan"))
            print(f"{row['inputs']}: {score:.4f}")
        return 0
    if args.checkpoint is None:
        raise ConfigError("--checkpoint: needed unless --matrix is given")
    out_dir = Path(args.out) if args.out else Path(args.checkpoint).parent
    reports = run_evaluation(experiment, args.checkpoint, out_dir)
    sys.stdout.write(reports["test"].to_text())
    return 0


def stream_lines(network, scenario, scales, lines, out):
    """Disaggregate comma-separated samples read from lines into out

    Each line holds one physical value per input signal, in scenario order.
    Lines which cannot be used are logged and skipped without touching the
    stream state. Returns the number of samples processed.
    """
    input_scales = scales.vector(scenario.input_signals)
    state = init_stream(network)
    out.write(",".join(scenario.output_columns) + "\n")
    out.flush()
    for number, line in enumerate(lines, start=1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        try:
            values = np.array([float(value) for value in text.split(",")])
            if values.shape != input_scales.shape:
                raise ShapeError(
                    f"{len(values)} values, expected {len(input_scales)}"
                    f" ({', '.join(scenario.input_signals)})"
                )
            predictions = state.step(values / input_scales)
        except ValueError as error:
            logger.error("line %d skipped: %s", number, error)
            continue
        estimates = clamp_nonnegative(
            denormalize(predictions, (scenario.output_signal,), scales)
        )
        out.write(",".join(format(float(value), ".10g") for value in estimates))
        out.write("\n")
        out.flush()
    return state.samples_seen


def cmd_stream(args):
    dtype = np.float32 if args.float32 else np.float64
    network, metadata = load_checkpoint(args.checkpoint, dtype=dtype)
    scenario, scales = stored_scenario(metadata, args.checkpoint)
    count = stream_lines(network, scenario, scales, sys.stdin, sys.stdout)
    logger.info("streamed %d samples", count)
    return 0


def cmd_synth(args):
    household = load_household(args.config)
    seed = household.seed if args.seed is None else args.seed
    series = synthesize_household(
        household.appliances,
        days=args.days or household.days,
        voltage=household.voltage,
        noise_model=household.noise,
        seed=seed,
        start=household.start,
    )
    out = Path(args.out) if args.out else Path(Path(args.config).stem + ".csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    series.to_csv(out)
    print(f"wrote {len(series)} samples to {out}")
    if household.targets:
        fraction = noise_fraction(series, household.targets)
        loads = ", ".join(household.targets)
        print(f"noise fraction (P) outside {loads}: {fraction:.3f}")
    return 0


def cmd_inspect(args):
    if args.checkpoint is not None:
        network, metadata = load_checkpoint(args.checkpoint)
    elif args.config is not None:
        experiment = experiment_from_args(args)
        network = build(experiment.network_config(), seed=experiment.seed)
        metadata = {
            "title": experiment.title,
            "scenario": experiment.scenario.to_dict(),
        }
    else:
        raise ConfigError("--checkpoint: give a checkpoint or an experiment --config")
    print(f"parameters: {parameter_count(network)}")
    print(f"receptive_field: {network.receptive_field}")
    print(f"network: {json.dumps(network.config.to_dict(), sort_keys=True)}")
    print(f"metadata: {json.dumps(metadata, sort_keys=True)}")
    return 0


def cmd_crossval(args):
    experiment = experiment_from_args(args)
    out_dir = run_directory(args, "crossval")
    result = run_cross_validation(experiment, args.folds, out_dir)
    print(f"folds: {len(result.reports)} of {args.folds}")
    sys.stdout.write(result.mean.to_text())
    return 0


def cmd_suite(args):
    out_dir = Path(args.out) if args.out else DEFAULT_RUNS / "suite"
    rows = run_suite(args.config, out_dir, exclude=args.exclude, seed=args.seed)
    for row in rows:
        score = row.get("estimated_accuracy_total", float("nan"))
        print(f"{row['experiment']}: {score:.4f}")
    return 0


def build_parser():
    parser = ArgumentParser(
        prog="wavenilm",
        description="Disaggregate household power with gated dilated convolutions",
    )
    parser.add_argument(
        "-v",
        "--verbose",
        action="count",
        default=0,
        help=f"log progress (-v) or everything (-vv); see also {LOG_LEVEL_VARIABLE}",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    def add_command(name, handler, help_text):
        command = commands.add_parser(name, help=help_text, description=help_text)
        command.set_defaults(handler=handler)
        return command

    def add_seed(command):
        command.add_argument("--seed", type=int, help="override the configured seed")

    command = add_command("train", cmd_train, "Train the network of an experiment")
    command.add_argument("--config", required=True, help="experiment JSON file")
    command.add_argument("--out", help="run directory (default runs/<config name>)")
    add_seed(command)

    command = add_command("eval", cmd_eval, "Score a checkpoint or run the matrix")
    command.add_argument("--config", required=True, help="experiment JSON file")
    command.add_argument("--checkpoint", help="trained checkpoint to score")
    command.add_argument(
        "--matrix",
        action="store_true",
        help="train and score every input-signal combination instead",
    )
    command.add_argument("--out", help="directory for the report files")
    add_seed(command)

    command = add_command(
        "stream", cmd_stream, "Disaggregate samples from standard input"
    )
    command.add_argument("--checkpoint", required=True, help="trained checkpoint")
    command.add_argument(
        "--float32", action="store_true", help="run inference in 32-bit floats"
    )

    command = add_command("synth", cmd_synth, "Simulate a household as CSV")
    command.add_argument("--config", required=True, help="household JSON file")
    command.add_argument("--out", help="CSV file to write (default <config name>.csv)")
    command.add_argument("--days", type=float, help="override the configured days")
    add_seed(command)

    command = add_command(
        "inspect", cmd_inspect, "Show parameter count and receptive field"
    )
    command.add_argument("--checkpoint", help="trained checkpoint")
    command.add_argument("--config", help="experiment JSON file")
    add_seed(command)

    command = add_command("crossval", cmd_crossval, "k-fold cross-validation")
    command.add_argument("--config", required=True, help="experiment JSON file")
    command.add_argument("--folds", type=int, default=10, help="number of folds")
    command.add_argument("--out", help="directory for folds.csv")
    add_seed(command)

    command = add_command("suite", cmd_suite, "Run every experiment in a directory")
    command.add_argument(
        "--config", required=True, help="main config.json naming the experiments"
    )
    command.add_argument("--out", help="directory for the runs and summary.csv")
    command.add_argument(
        "--exclude",
        action="append",
        help="Exclude files based on pattern (shell wildcards with Python fnmatch)",
    )
    add_seed(command)
    return parser


def main(argv=None):
    """Process command line and run the command; returns the exit code"""
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        configure_logging(args.verbose)
        return args.handler(args)
    except USER_ERRORS as error:
        print(f"wavenilm: error: {error}", file=sys.stderr)
        return 1
    # Anything else is a defect, reported with its traceback.
    except Exception:  # pylint: disable=broad-except
        logger.exception("internal error")
        return 2


if __name__ == "__main__":
    sys.exit(main())
