#!/usr/bin/env python3

"""Tests for the training loop, splits and cross-validation"""

import tempfile
import unittest
from pathlib import Path
from unittest import mock

import numpy as np
import pandas as pd

from wavenilm.data import Scenario, ScenarioData
from wavenilm.errors import (
    ConfigError,
    DataError,
    NonFiniteError,
    ShapeError,
    TrainingDivergedError,
)
from wavenilm.network import NetworkConfig, build
from wavenilm.training import (
    EvaluationSet,
    TrainConfig,
    TrainingData,
    cross_validate,
    evaluate,
    fold_plans,
    fold_scales,
    loss,
    loss_and_gradient,
    make_windows,
    split,
    train,
)

SCENARIO = Scenario("noisy", ("fan", "heater"), ("P", "Q"), "P")


def tiny_config(**overrides):
    values = {
        "input_channels": 2,
        "output_loads": 2,
        "block_widths": (8, 8, 8),
        "dilation_schedule": (1, 2, 4),
        "input_dense_width": 8,
        "dropout_rate": 0.0,
    }
    values.update(overrides)
    return NetworkConfig(**values)


def training_config(**overrides):
    values = {"batch_size": 4, "max_epochs": 3, "window_length": 32, "seed": 1}
    values.update(overrides)
    return TrainConfig(**values)


def scenario_data(length, seed=0):
    rng = np.random.default_rng(seed)
    inputs = rng.uniform(0.0, 1.0, size=(length, 2))
    targets = np.stack([0.3 * inputs[:, 0], 0.6 * inputs[:, 0]], axis=-1)
    return ScenarioData(SCENARIO, inputs, targets)


def training_data(length=200, seed=0, validation=False):
    data = scenario_data(length, seed)
    inputs, targets = make_windows([data], 32, 7)
    held = None
    if validation:
        held = evaluation_set(100, seed + 1)
    return TrainingData(inputs, targets, held)


def evaluation_set(length=100, seed=5):
    data = scenario_data(length, seed)
    return EvaluationSet(data.inputs, data.targets)


class TestLoss(unittest.TestCase):
    """Mean squared error over the post-warmup region"""

    def setUp(self):
        self.predictions = np.zeros((1, 4, 1))
        self.targets = np.array([[[1.0], [2.0], [3.0], [4.0]]])

    def test_whole_window(self):
        self.assertEqual(loss(self.predictions, self.targets, region_start=1), 7.5)

    def test_region_counts_from_one(self):
        self.assertEqual(loss(self.predictions, self.targets, region_start=3), 12.5)
        self.assertEqual(loss(self.predictions, self.targets, region_start=4), 16.0)

    def test_gradient_outside_region_is_zero(self):
        value, grad = loss_and_gradient(self.predictions, self.targets, 3)
        self.assertEqual(value, 12.5)
        np.testing.assert_array_equal(grad[0, :2], 0.0)
        np.testing.assert_array_equal(grad[0, 2:, 0], [-3.0, -4.0])

    def test_empty_region(self):
        with self.assertRaises(ShapeError):
            loss(self.predictions, self.targets, region_start=5)
        with self.assertRaises(ShapeError):
            loss(self.predictions, self.targets, region_start=0)

    def test_shape_mismatch(self):
        with self.assertRaises(ShapeError):
            loss(np.zeros((1, 4, 2)), self.targets, region_start=1)


class TestTrainConfig(unittest.TestCase):
    """Training settings"""

    def test_load_set_budgets(self):
        self.assertEqual(TrainConfig.for_load_set("full").max_epochs, 500)
        self.assertEqual(TrainConfig.for_load_set("deferrable").max_epochs, 300)
        config = TrainConfig.from_dict({"load_set": "deferrable", "max_epochs": 5})
        self.assertEqual(config.max_epochs, 5)

    def test_invalid_settings(self):
        with self.assertRaises(ConfigError):
            TrainConfig(batch_size=0)
        with self.assertRaises(ConfigError):
            TrainConfig(train_fraction=1.0)
        with self.assertRaises(ConfigError):
            TrainConfig.for_load_set("partial")
        with self.assertRaises(ConfigError) as context:
            TrainConfig.from_dict({"epochs": 3})
        self.assertIn("training.epochs", str(context.exception))

    def test_wrongly_typed_settings(self):
        cases = {
            "batch_size": "8",
            "max_epochs": 2.5,
            "patience": True,
            "learning_rate": "fast",
            "seed": None,
        }
        for name, value in cases.items():
            with self.assertRaises(ConfigError, msg=name) as context:
                TrainConfig.from_dict({name: value})
            self.assertIn(f"training.{name}", str(context.exception))
        self.assertEqual(TrainConfig(learning_rate=1).learning_rate, 1)

    def test_region_start(self):
        network_config = tiny_config()
        self.assertEqual(training_config().region_start_for(network_config), 8)
        with self.assertRaises(ConfigError):
            training_config(loss_region_start=5).region_start_for(network_config)
        with self.assertRaises(ConfigError):
            training_config(window_length=4).region_start_for(network_config)


class TestTrain(unittest.TestCase):
    """The optimization loop"""

    def test_zero_learning_rate_keeps_parameters(self):
        network = build(tiny_config(dropout_rate=0.2), seed=2)
        before = network.copy_parameters()
        train(network, training_data(), training_config(learning_rate=0.0))
        for name, values in network.parameters().items():
            np.testing.assert_array_equal(values, before[name], err_msg=name)

    def test_reproducible(self):
        runs = []
        for unused in range(2):
            network = build(tiny_config(dropout_rate=0.1), seed=3)
            network, history = train(network, training_data(), training_config())
            runs.append((network.copy_parameters(), history))
        first, second = runs
        self.assertEqual(
            [record.train_loss for record in first[1]],
            [record.train_loss for record in second[1]],
        )
        for name, values in first[0].items():
            np.testing.assert_array_equal(values, second[0][name], err_msg=name)

    def test_loss_decreases(self):
        network = build(tiny_config(), seed=4)
        data = training_data()
        config = training_config(
            batch_size=len(data.windows_inputs), max_epochs=40, learning_rate=1e-2
        )
        unused, history = train(network, data, config)
        self.assertLess(history[-1].train_loss, history[0].train_loss)

    def test_loss_strictly_decreases_at_start(self):
        network = build(tiny_config(), seed=4)
        data = training_data()
        config = training_config(
            batch_size=len(data.windows_inputs), max_epochs=5, learning_rate=3e-3
        )
        unused, history = train(network, data, config)
        losses = [record.train_loss for record in history]
        self.assertEqual(len(losses), 5)
        for earlier, later in zip(losses, losses[1:]):
            self.assertLess(later, earlier, msg=f"training losses {losses}")

    def test_early_stopping(self):
        network = build(tiny_config(), seed=5)
        config = training_config(learning_rate=0.0, max_epochs=20, patience=2)
        unused, history = train(network, training_data(validation=True), config)
        self.assertEqual(len(history), 3)
        self.assertTrue(np.isfinite(history[0].validation_accuracy))

    def test_run_directory(self):
        network = build(tiny_config(), seed=6)
        with tempfile.TemporaryDirectory() as directory:
            run_dir = Path(directory) / "run"
            unused, history = train(
                network,
                training_data(validation=True),
                training_config(max_epochs=2),
                run_dir=run_dir,
                metadata={"title": "tiny"},
            )
            for name in ["best.ckpt", "final.ckpt", "history.csv"]:
                self.assertTrue((run_dir / name).is_file(), msg=name)
            frame = pd.read_csv(run_dir / "history.csv")
            self.assertEqual(list(frame["epoch"]), [1, 2])
            self.assertNotIn("seconds", frame.columns)

    def test_divergence_restores_parameters(self):
        network = build(tiny_config(), seed=7)
        before = network.copy_parameters()
        with mock.patch.object(
            network, "forward_train", side_effect=NonFiniteError("overflow")
        ):
            with self.assertRaises(TrainingDivergedError) as context:
                train(network, training_data(), training_config())
        self.assertEqual(context.exception.history, [])
        for name, values in network.parameters().items():
            np.testing.assert_array_equal(values, before[name], err_msg=name)

    def test_non_finite_windows(self):
        data = training_data()
        inputs = data.windows_inputs.copy()
        inputs[0, 3, 1] = np.nan
        with self.assertRaises(NonFiniteError):
            train(
                build(tiny_config(), seed=1),
                TrainingData(inputs, data.windows_targets),
                training_config(),
            )


class TestEvaluate(unittest.TestCase):
    """Scoring with and without context"""

    def test_context_is_not_scored(self):
        network = build(tiny_config(), seed=8)
        evaluation = evaluation_set()
        primed = EvaluationSet(evaluation.inputs, evaluation.targets, context=7)
        report = evaluate(network, primed)
        self.assertAlmostEqual(
            report.ground_truth_sum, float(evaluation.targets[7:].sum())
        )

    def test_warmup_skipped_without_context(self):
        network = build(tiny_config(), seed=8)
        evaluation = evaluation_set()
        report = evaluate(network, evaluation, region_start=8)
        self.assertAlmostEqual(
            report.ground_truth_sum, float(evaluation.targets[7:].sum())
        )

    def test_scale_and_names(self):
        network = build(tiny_config(), seed=8)
        evaluation = evaluation_set()
        plain = evaluate(network, evaluation)
        scaled = evaluate(network, evaluation, scale=4.0, load_names=["fan", "heater"])
        self.assertEqual(list(scaled.per_appliance), ["fan", "heater"])
        self.assertAlmostEqual(
            scaled.estimated_accuracy_total, plain.estimated_accuracy_total
        )


class TestSplits(unittest.TestCase):
    """Windows, train/test splits and folds"""

    def test_windows_stay_inside_pieces(self):
        first = scenario_data(40, seed=1)
        second = scenario_data(20, seed=2)
        inputs, targets = make_windows([first, second], 32, 7)
        self.assertEqual(inputs.shape, (2, 32, 2))
        np.testing.assert_array_equal(inputs[1], first.inputs[8:])

    def test_no_piece_long_enough(self):
        with self.assertRaises(DataError):
            make_windows([scenario_data(20)], 32, 7)

    def test_split_needs_ten_windows(self):
        with self.assertRaises(DataError):
            split(scenario_data(319), 0.9, window_length=32)
        train_part, test_part = split(scenario_data(320), 0.9, window_length=32)
        self.assertEqual((len(train_part), len(test_part)), (288, 32))

    def test_split_is_contiguous(self):
        data = scenario_data(400)
        train_part, test_part = split(data, 0.75, window_length=32)
        np.testing.assert_array_equal(
            np.concatenate([train_part.inputs, test_part.inputs]), data.inputs
        )

    def test_folds_tile_the_series(self):
        plans = fold_plans(103, 10)
        self.assertEqual(plans[0].test_start, 0)
        self.assertEqual(plans[-1].test_stop, 103)
        for previous, plan in zip(plans, plans[1:]):
            self.assertEqual(previous.test_stop, plan.test_start)
        self.assertEqual({plan.test_stop - plan.test_start for plan in plans}, {10, 11})

    def test_invalid_folds(self):
        with self.assertRaises(ConfigError):
            fold_plans(100, 1)
        with self.assertRaises(DataError):
            fold_plans(5, 10)


class TestCrossValidation(unittest.TestCase):
    """k-fold cross-validation"""

    def test_two_folds(self):
        built = []

        def net_builder(seed):
            built.append(seed)
            return build(tiny_config(), seed=seed)

        result = cross_validate(
            net_builder,
            scenario_data(200),
            k=2,
            config=training_config(max_epochs=1),
            load_names=["fan", "heater"],
        )
        self.assertEqual(built, [1, 1])
        self.assertEqual(len(result.reports), 2)
        self.assertEqual(result.failures, [])
        self.assertAlmostEqual(
            result.mean.estimated_accuracy_total,
            np.mean([report.estimated_accuracy_total for report in result.reports]),
        )

    def test_scales_come_from_training_samples(self):
        data = scenario_data(200)
        loud = ScenarioData(
            data.scenario,
            np.concatenate([data.inputs[:100] * 1000.0, data.inputs[100:]]),
            np.concatenate([data.targets[:100] * 1000.0, data.targets[100:]]),
        )
        plans = fold_plans(len(loud), 2)
        self.assertEqual(fold_scales(loud, plans[0]).scale("P"), 1.0)
        self.assertEqual(fold_scales(loud, plans[1]).scale("P"), 1024.0)
        result = cross_validate(
            lambda seed: build(tiny_config(), seed=seed),
            loud,
            k=2,
            config=training_config(max_epochs=1),
        )
        self.assertEqual([record.scale("Q") for record in result.scales], [1.0, 1024.0])

    def test_failing_folds_are_recorded(self):
        result = cross_validate(
            lambda seed: build(tiny_config(), seed=seed),
            scenario_data(200),
            k=2,
            config=training_config(window_length=150),
        )
        self.assertEqual([fold for fold, unused in result.failures], [0, 1])
        self.assertIsNone(result.mean)


if __name__ == "__main__":
    unittest.main()
