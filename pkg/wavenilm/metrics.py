"""Estimated Accuracy, total and per appliance

    Est. Acc. = 1 - sum_t sum_k |s_hat_k(t) - s_k(t)| / (2 sum_t sum_k s_k(t))

Dropping the sum over k gives the accuracy of a single appliance.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import MetricError, NonFiniteError, ShapeError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AccuracyReport:
    """Estimated Accuracy with the error and ground-truth sums behind it"""

    estimated_accuracy_total: float
    per_appliance: dict
    absolute_error_sum: float
    ground_truth_sum: float
    appliance_error_sums: dict = field(default_factory=dict)
    appliance_truth_sums: dict = field(default_factory=dict)

    def to_text(self):
        """key = value lines"""
        lines = [
            f"estimated_accuracy_total = {self.estimated_accuracy_total!r}",
            f"absolute_error_sum = {self.absolute_error_sum!r}",
            f"ground_truth_sum = {self.ground_truth_sum!r}",
        ]
        for load, value in self.per_appliance.items():
            lines.append(f"estimated_accuracy.{load} = {value!r}")
        return "\n".join(lines) + "\n"

    def to_row(self, **labels):
        """Flat dictionary for one row of an experiment table"""
        row = dict(labels)
        row["estimated_accuracy_total"] = self.estimated_accuracy_total
        row["absolute_error_sum"] = self.absolute_error_sum
        row["ground_truth_sum"] = self.ground_truth_sum
        for load, value in self.per_appliance.items():
            row[f"estimated_accuracy.{load}"] = value
        return row


def clamp_nonnegative(values):
    """Power cannot be negative; applied to user-facing predictions only"""
    return np.maximum(values, 0.0)


def estimated_accuracy(predictions, truth, load_names=None):
    """Score predictions against ground truth shaped (..., loads)

    Ground truth has to be non-negative with a positive total; a report for
    all-zero truth would be meaningless, so it is an error.
    """
    predictions = np.asarray(predictions, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if predictions.shape != truth.shape:
        raise ShapeError(
            f"predictions have shape {predictions.shape},"
            f" ground truth has shape {truth.shape}"
        )
    if truth.ndim == 1:
        predictions = predictions[:, np.newaxis]
        truth = truth[:, np.newaxis]
    loads = truth.shape[-1]
    predictions = predictions.reshape(-1, loads)
    truth = truth.reshape(-1, loads)
    if not (np.all(np.isfinite(predictions)) and np.all(np.isfinite(truth))):
        raise NonFiniteError("predictions or ground truth are not finite")
    if np.any(truth < 0):
        raise MetricError("ground truth has negative values")
    if load_names is None:
        load_names = [f"load{index}" for index in range(loads)]
    if len(load_names) != loads:
        raise ShapeError(f"{len(load_names)} load names given for {loads} loads")

    error_sums = np.abs(predictions - truth).sum(axis=0)
    truth_sums = truth.sum(axis=0)
    total_truth = float(truth_sums.sum())
    if total_truth <= 0:
        raise MetricError("ground truth sums to zero, Estimated Accuracy is undefined")
    total_error = float(error_sums.sum())

    per_appliance = {}
    for name, error, ground in zip(load_names, error_sums, truth_sums):
        if ground > 0:
            per_appliance[name] = float(1.0 - error / (2.0 * ground))
        else:
            logger.warning("load %s is never on, its accuracy is undefined", name)
            per_appliance[name] = float("nan")
    return AccuracyReport(
        estimated_accuracy_total=1.0 - total_error / (2.0 * total_truth),
        per_appliance=per_appliance,
        absolute_error_sum=total_error,
        ground_truth_sum=total_truth,
        appliance_error_sums=dict(zip(load_names, error_sums.tolist())),
        appliance_truth_sums=dict(zip(load_names, truth_sums.tolist())),
    )


def mean_report(reports):
    """Arithmetic mean of several reports (e.g. cross-validation folds)"""
    reports = list(reports)
    if not reports:
        raise MetricError("no reports to average")

    def average(values):
        return float(np.mean(values))

    loads = list(reports[0].per_appliance)
    return AccuracyReport(
        estimated_accuracy_total=average(
            [report.estimated_accuracy_total for report in reports]
        ),
        per_appliance={
            load: average([report.per_appliance[load] for report in reports])
            for load in loads
        },
        absolute_error_sum=average([report.absolute_error_sum for report in reports]),
        ground_truth_sum=average([report.ground_truth_sum for report in reports]),
        appliance_error_sums={
            load: average([report.appliance_error_sums[load] for report in reports])
            for load in reports[0].appliance_error_sums
        },
        appliance_truth_sums={
            load: average([report.appliance_truth_sums[load] for report in reports])
            for load in reports[0].appliance_truth_sums
        },
    )


def write_report_table(path, rows):
    """Write report rows (see AccuracyReport.to_row) as CSV with a header"""
    pd.DataFrame(list(rows)).to_csv(path, index=False, lineterminator="\n")
