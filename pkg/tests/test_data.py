#!/usr/bin/env python3

"""Tests for meter data ingestion, scenarios, normalization and synthesis"""

import math
import tempfile
import unittest
from itertools import combinations
from pathlib import Path
from unittest import mock

import numpy as np

from wavenilm import data
from wavenilm.config import load_household
from wavenilm.data import (
    AGGREGATE,
    DEFERRABLE_LOADS,
    NOISE,
    SIGNALS,
    ApplianceState,
    NoiseModel,
    PowerSample,
    Scenario,
    SyntheticAppliance,
    build_scenario,
    compute_scales,
    denormalize,
    expected_power,
    ingest_csv,
    ingest_signal_files,
    noise_fraction,
    normalize,
    normalize_scenario,
    power_triangle,
    synthesize_household,
    window,
    window_starts,
)
from wavenilm.errors import ConfigError, DataError

HOUSEHOLDS = Path(__file__).resolve().parent.parent / "households"
START = 1333238400


def two_state(name, power, phase, on_rate, off_rate):
    return SyntheticAppliance(
        name=name,
        states=(ApplianceState("off", 0.0, 0.0), ApplianceState("on", power, phase)),
        transitions=((1 - on_rate, on_rate), (off_rate, 1 - off_rate)),
    )


def write_csv(path, header, rows):
    lines = [",".join(header)]
    lines.extend(",".join(str(value) for value in row) for row in rows)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


class CsvTestCase(unittest.TestCase):
    def setUp(self):
        self.directory = tempfile.TemporaryDirectory()
        self.path = Path(self.directory.name)

    def tearDown(self):
        self.directory.cleanup()


class TestIngest(CsvTestCase):
    """Reading meter CSV files"""

    def test_epoch_seconds(self):
        rows = [(START + 60 * step, 100.0 + step, 10.0) for step in range(10)]
        write_csv(self.path / "meter.csv", ["timestamp", "agg_P", "fan_P"], rows)
        series = ingest_csv(self.path / "meter.csv")
        self.assertEqual(len(series), 10)
        self.assertEqual(series.entities, [AGGREGATE, "fan"])
        self.assertEqual(series.appliances, ["fan"])
        np.testing.assert_array_equal(series.values("agg", "P")[:3], [100, 101, 102])

    def test_iso_timestamps(self):
        rows = [(f"2012-04-01T00:0{step}:00", 5.0) for step in range(5)]
        write_csv(self.path / "meter.csv", ["time", "agg_S"], rows)
        series = ingest_csv(self.path / "meter.csv")
        self.assertEqual(series.signals("agg"), ["S"])

    def test_channel_map(self):
        rows = [(START + 60 * step, 1.0, 2.0, 3.0) for step in range(5)]
        write_csv(self.path / "meter.csv", ["UNIX_TS", "WHE", "HPE", "XXX"], rows)
        series = ingest_csv(
            self.path / "meter.csv",
            {"WHE": ("agg", "P"), "HPE": ("heat_pump", "P")},
        )
        self.assertEqual(list(series.frame.columns), ["agg_P", "heat_pump_P"])

    def test_shuffled_rows_rejected(self):
        rows = [(START + 60 * step, 1.0) for step in range(10)]
        rows[3], rows[6] = rows[6], rows[3]
        write_csv(self.path / "meter.csv", ["timestamp", "agg_P"], rows)
        with self.assertRaises(DataError) as context:
            ingest_csv(self.path / "meter.csv")
        self.assertIn("strictly increasing", str(context.exception))

    def test_duplicate_timestamps_rejected(self):
        rows = [(START, 1.0), (START, 2.0), (START + 60, 3.0)]
        write_csv(self.path / "meter.csv", ["timestamp", "agg_P"], rows)
        with self.assertRaises(DataError):
            ingest_csv(self.path / "meter.csv")

    def test_off_grid_timestamps_rejected(self):
        rows = [(START, 1.0), (START + 60, 2.0), (START + 90, 3.0)]
        write_csv(self.path / "meter.csv", ["timestamp", "agg_P"], rows)
        with self.assertRaises(DataError):
            ingest_csv(self.path / "meter.csv")

    def test_short_gap_filled(self):
        steps = [step for step in range(200) if step not in (50, 51, 52)]
        rows = [(START + 60 * step, float(step)) for step in steps]
        write_csv(self.path / "meter.csv", ["timestamp", "agg_P"], rows)
        with self.assertLogs("wavenilm.data", "WARNING") as logs:
            series = ingest_csv(self.path / "meter.csv")
        self.assertIn("filled 3 missing samples", logs.output[0])
        self.assertEqual(len(series), 200)
        np.testing.assert_array_equal(
            series.values("agg", "P")[49:54], [49, 49, 49, 49, 53]
        )

    def test_long_gap_rejected(self):
        steps = [step for step in range(500) if not 100 <= step < 106]
        rows = [(START + 60 * step, 1.0) for step in steps]
        write_csv(self.path / "meter.csv", ["timestamp", "agg_P"], rows)
        with self.assertRaises(DataError) as context:
            ingest_csv(self.path / "meter.csv")
        self.assertIn("gap of 6 samples", str(context.exception))

    def test_too_many_missing_rejected(self):
        steps = [step for step in range(100) if step % 10 != 5]
        rows = [(START + 60 * step, 1.0) for step in steps]
        write_csv(self.path / "meter.csv", ["timestamp", "agg_P"], rows)
        with self.assertRaises(DataError):
            ingest_csv(self.path / "meter.csv")

    def test_bad_column_name(self):
        rows = [(START + 60 * step, 1.0) for step in range(3)]
        write_csv(self.path / "meter.csv", ["timestamp", "aggregate"], rows)
        with self.assertRaises(DataError):
            ingest_csv(self.path / "meter.csv")

    def test_non_numeric_values(self):
        rows = [(START, 1.0), (START + 60, "n/a")]
        write_csv(self.path / "meter.csv", ["timestamp", "agg_P"], rows)
        with self.assertRaises(DataError):
            ingest_csv(self.path / "meter.csv")

    def test_missing_file(self):
        with self.assertRaises(DataError):
            ingest_csv(self.path / "missing.csv")

    def test_signal_files(self):
        header = ["UNIX_TS", "WHE", "DWE"]
        write_csv(
            self.path / "Electricity_P.csv",
            header,
            [(START + 60 * step, 500.0, 100.0) for step in range(6)],
        )
        write_csv(
            self.path / "Electricity_Q.csv",
            header,
            [(START + 60 * step, 50.0, 20.0) for step in range(1, 6)],
        )
        series = ingest_signal_files(
            {
                "P": self.path / "Electricity_P.csv",
                "Q": self.path / "Electricity_Q.csv",
            },
            {"WHE": "agg", "DWE": "dishwasher"},
        )
        self.assertEqual(len(series), 5)
        self.assertEqual(series.signals("dishwasher"), ["P", "Q"])


class TestPower(unittest.TestCase):
    """Electrical relationships between I, P, Q and S"""

    def test_power_triangle(self):
        channels = power_triangle(1000.0, math.pi / 3, 120.0)
        self.assertAlmostEqual(float(channels["S"]), 2000.0)
        self.assertAlmostEqual(float(channels["I"]), 2000.0 / 120.0)
        self.assertAlmostEqual(float(channels["Q"]), 2000.0 * math.sin(math.pi / 3))

    def test_power_sample(self):
        sample = PowerSample.from_current(10.0, 120.0, 0.0)
        self.assertEqual(sample.apparent, 1200.0)
        self.assertEqual(sample.active, 1200.0)
        self.assertEqual(sample.reactive, 0.0)
        again = PowerSample.from_active(sample.active, 0.0, 120.0)
        self.assertAlmostEqual(again.current, 10.0)


class TestSynthesis(CsvTestCase):
    """Synthetic households"""

    def setUp(self):
        super().setUp()
        self.appliances = [
            two_state("fan", 100.0, 0.3, 0.02, 0.05),
            two_state("heater", 600.0, 0.05, 0.005, 0.02),
        ]
        self.series = synthesize_household(
            self.appliances, days=2, noise_model=NoiseModel(5.0, 3.0), seed=4
        )

    def test_columns(self):
        self.assertEqual(self.series.entities, [AGGREGATE, "fan", "heater", NOISE])
        self.assertEqual(len(self.series), 2 * 1440)

    def test_aggregate_is_sum_plus_noise(self):
        for signal in SIGNALS:
            total = sum(self.series.values(name, signal) for name in ["fan", "heater"])
            total = total + self.series.values(NOISE, signal)
            np.testing.assert_allclose(
                self.series.values(AGGREGATE, signal),
                total,
                rtol=0,
                atol=1e-9,
                err_msg=f"aggregate {signal}",
            )

    def test_appliance_channels_follow_power_triangle(self):
        current = self.series.values("fan", "I")
        apparent = self.series.values("fan", "S")
        active = self.series.values("fan", "P")
        reactive = self.series.values("fan", "Q")
        np.testing.assert_allclose(apparent, current * 120.0)
        np.testing.assert_allclose(active, apparent * math.cos(0.3))
        np.testing.assert_allclose(reactive, apparent * math.sin(0.3))
        np.testing.assert_allclose(
            apparent**2, active**2 + reactive**2, rtol=0, atol=1e-9
        )
        self.assertEqual(set(np.unique(active)), {0.0, 100.0})

    def test_seeded(self):
        again = synthesize_household(
            self.appliances, days=2, noise_model=NoiseModel(5.0, 3.0), seed=4
        )
        self.series.to_csv(self.path / "first.csv")
        again.to_csv(self.path / "second.csv")
        self.assertEqual(
            (self.path / "first.csv").read_bytes(),
            (self.path / "second.csv").read_bytes(),
        )

    def test_csv_reingests_without_warnings(self):
        self.series.to_csv(self.path / "household.csv")
        with mock.patch.object(data.logger, "warning") as warning:
            series = ingest_csv(self.path / "household.csv")
        warning.assert_not_called()
        np.testing.assert_allclose(
            series.values("agg", "Q"), self.series.values("agg", "Q")
        )
        self.assertTrue(series.timestamps.equals(self.series.timestamps))

    def test_reserved_names(self):
        with self.assertRaises(ConfigError):
            synthesize_household([two_state("agg", 1.0, 0.0, 0.1, 0.1)], days=1)
        with self.assertRaises(ConfigError):
            synthesize_household(self.appliances + self.appliances[:1], days=1)

    def test_invalid_appliances(self):
        with self.assertRaises(ConfigError):
            two_state("fan", 100.0, 0.3, 0.5, 1.5)
        with self.assertRaises(ConfigError):
            two_state("fan", 100.0, math.pi / 2, 0.1, 0.1)
        with self.assertRaises(ConfigError):
            two_state("fan", -1.0, 0.0, 0.1, 0.1)

    def test_expected_power(self):
        appliance = two_state("hvac", 2400.0, 0.35, 0.02, 0.04)
        self.assertAlmostEqual(expected_power(appliance), 800.0)

    def test_single_state_appliance(self):
        base = SyntheticAppliance("base", (ApplianceState("on", 300.0, 0.2),))
        series = synthesize_household([base], days=1)
        np.testing.assert_array_equal(series.values("base", "P"), 300.0)


class TestPresets(unittest.TestCase):
    """Shipped synthetic households"""

    def test_deferrable_noise_fraction(self):
        household = load_household(HOUSEHOLDS / "deferrable_noisy.json")
        self.assertEqual(household.targets, DEFERRABLE_LOADS)
        means = {item.name: expected_power(item) for item in household.appliances}
        expected = 1.0 - sum(means[name] for name in DEFERRABLE_LOADS) / sum(
            means.values()
        )
        self.assertAlmostEqual(expected, 0.6, delta=0.01)
        series = synthesize_household(
            household.appliances,
            days=household.days,
            voltage=household.voltage,
            noise_model=household.noise,
            seed=household.seed,
        )
        self.assertAlmostEqual(
            noise_fraction(series, DEFERRABLE_LOADS), 0.6, delta=0.06
        )

    def test_desk_appliances_are_distinguishable(self):
        household = load_household(HOUSEHOLDS / "desk_three_appliances.json")
        powers = [item.powers[-1] for item in household.appliances]
        sums = [
            sum(subset)
            for size in range(1, len(powers) + 1)
            for subset in combinations(powers, size)
        ]
        self.assertEqual(len(sums), len(set(sums)), msg="subset sums must differ")
        phases = [item.phases[-1] for item in household.appliances]
        self.assertEqual(len(phases), len(set(phases)))


class TestScenarios(unittest.TestCase):
    """Scenario construction"""

    def setUp(self):
        self.series = synthesize_household(
            [
                two_state("fan", 100.0, 0.3, 0.02, 0.05),
                two_state("heater", 600.0, 0.05, 0.005, 0.02),
                two_state("fridge", 250.0, 0.6, 0.03, 0.03),
            ],
            days=1,
            noise_model=NoiseModel(5.0, 5.0),
            seed=2,
        )

    def test_noisy(self):
        scenario = Scenario("noisy", ("fan", "heater"), ("P", "Q"), "P")
        result = build_scenario(self.series, scenario)
        self.assertEqual(result.inputs.shape, (1440, 2))
        self.assertEqual(result.targets.shape, (1440, 2))
        np.testing.assert_array_equal(
            result.inputs[:, 1], self.series.values("agg", "Q")
        )
        np.testing.assert_array_equal(
            result.targets[:, 1], self.series.values("heater", "P")
        )

    def test_denoised(self):
        scenario = Scenario("denoised", ("fan", "heater"), ("P",), "P")
        result = build_scenario(self.series, scenario)
        np.testing.assert_allclose(result.inputs[:, 0], result.targets.sum(axis=1))

    def test_mask_channel(self):
        scenario = Scenario("noisy", ("fan",), ("I", "P", "Q", "S"), "Q")
        self.assertEqual(scenario.mask_input_channel, 2)
        self.assertEqual(scenario.output_columns, ["fan_Q"])

    def test_invalid(self):
        with self.assertRaises(ConfigError) as context:
            Scenario("noisy", ("fan",), ("P", "X"), "P")
        self.assertIn("scenario.input_signals", str(context.exception))
        with self.assertRaises(ConfigError):
            Scenario("noisy", ("fan",), ("P",), "Q")
        with self.assertRaises(ConfigError):
            Scenario("quiet", ("fan",), ("P",), "P")
        with self.assertRaises(ConfigError):
            Scenario("noisy", (), ("P",), "P")

    def test_unknown_load(self):
        with self.assertRaises(DataError):
            build_scenario(self.series, Scenario("noisy", ("oven",), ("P",), "P"))


class TestNormalization(unittest.TestCase):
    """Power-of-two scaling"""

    def test_scales(self):
        values = np.array([[4800.0, -1024.0], [100.0, 3.0]])
        record = compute_scales(values, ("P", "Q"))
        self.assertEqual(record.scale("P"), 8192.0)
        self.assertEqual(record.scale("Q"), 1024.0)

    def test_all_zero_channel(self):
        with self.assertLogs("wavenilm.data", "WARNING"):
            record = compute_scales(np.zeros((5, 1)), ("I",))
        self.assertEqual(record.scale("I"), 1.0)

    def test_round_trip(self):
        values = np.array([[4800.0, 7.0], [-30.0, 3.0]])
        scaled, record = normalize(values, ("P", "Q"))
        self.assertLessEqual(float(np.max(np.abs(scaled))), 1.0)
        np.testing.assert_array_equal(denormalize(scaled, ("P", "Q"), record), values)

    def test_targets_use_output_scale(self):
        series = synthesize_household(
            [two_state("fan", 100.0, 0.3, 0.5, 0.5)], days=1, seed=1
        )
        scenario = Scenario("noisy", ("fan",), ("P", "S"), "S")
        normalized, record = normalize_scenario(build_scenario(series, scenario))
        np.testing.assert_allclose(
            normalized.targets[:, 0],
            series.values("fan", "S") / record.scale("S"),
        )

    def test_given_record(self):
        scaled, record = normalize(np.array([[10.0]]), ("P",))
        again, unused = normalize(np.array([[20.0]]), ("P",), record)
        self.assertEqual(float(again[0, 0]), 20.0 / 16.0)


class TestWindows(unittest.TestCase):
    """Overlapping training windows"""

    def test_exact_tiling(self):
        starts = window_starts(1440 + 2 * 929, 1440, 511)
        np.testing.assert_array_equal(starts, [0, 929, 1858])

    def test_end_aligned_window(self):
        np.testing.assert_array_equal(window_starts(2000, 1440, 511), [0, 560])

    def test_scored_regions_cover_series(self):
        length = 5000
        covered = np.zeros(length, dtype=bool)
        for start in window_starts(length, 1440, 511):
            covered[start + 511 : start + 1440] = True
        self.assertTrue(np.all(covered[511:]))

    def test_window_contents(self):
        values = np.arange(20, dtype=np.float64).reshape(10, 2)
        windows = window(values, window_length=4, overlap=1)
        self.assertEqual(windows.shape, (3, 4, 2))
        np.testing.assert_array_equal(windows[1, 0], values[3])

    def test_too_short(self):
        with self.assertRaises(DataError):
            window_starts(100, 1440, 511)

    def test_invalid_overlap(self):
        with self.assertRaises(ConfigError):
            window_starts(3000, 1440, 1440)


if __name__ == "__main__":
    unittest.main()
