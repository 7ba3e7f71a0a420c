"""Meter data: CSV ingestion, scenarios, normalization, windows, synthesis

Series are kept as pandas frames on a uniform one-minute grid with one column
per entity and signal kind, named `<entity>_<signal>` (e.g. `agg_P`,
`clothes_dryer_I`). The aggregate meter is the entity `agg`; synthetic data
also carries the unmetered part of the aggregate as the entity `noise`.
"""

import bisect
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import ConfigError, DataError

logger = logging.getLogger(__name__)

SIGNALS = ("I", "P", "Q", "S")
SIGNAL_UNITS = {"I": "A", "P": "W", "Q": "var", "S": "VA"}
AGGREGATE = "agg"
NOISE = "noise"
RESERVED_ENTITIES = (AGGREGATE, NOISE)
TIMESTAMP = "timestamp"
SAMPLE_PERIOD = pd.Timedelta(minutes=1)
MAX_GAP = 5
MAX_MISSING_FRACTION = 0.05
DAY = 1440
DEFAULT_START = "2012-04-01 00:00:00"
SCENARIO_MODES = ("noisy", "denoised")
DEFERRABLE_LOADS = ("hvac", "heat_pump", "wall_oven", "clothes_dryer", "dishwasher")


def column_name(entity, signal):
    return f"{entity}_{signal}"


def parse_column(name):
    """Split `<entity>_<signal>` into its parts"""
    entity, separator, signal = str(name).rpartition("_")
    if not separator or not entity or signal not in SIGNALS:
        raise DataError(
            f"column '{name}' is not named <entity>_<signal>"
            f" with signal one of {', '.join(SIGNALS)}"
        )
    return entity, signal


@dataclass(frozen=True)
class MeterSeries:
    """Time-indexed measurements of the aggregate and of sub-meters"""

    frame: pd.DataFrame

    def __len__(self):
        return len(self.frame)

    @property
    def timestamps(self):
        return self.frame.index

    @property
    def entities(self):
        names = []
        for column in self.frame.columns:
            entity, unused = parse_column(column)
            if entity not in names:
                names.append(entity)
        return names

    @property
    def appliances(self):
        return [name for name in self.entities if name not in RESERVED_ENTITIES]

    def signals(self, entity):
        return [
            signal for signal in SIGNALS if column_name(entity, signal) in self.frame
        ]

    def has(self, entity, signal):
        return column_name(entity, signal) in self.frame

    def values(self, entity, signal):
        try:
            column = self.frame[column_name(entity, signal)]
        except KeyError:
            raise DataError(f"no {signal} measurements for '{entity}'") from None
        return column.to_numpy(dtype=np.float64)

    def slice(self, start, stop):
        return MeterSeries(self.frame.iloc[start:stop])

    def to_csv(self, path):
        """Write the series with epoch-second timestamps in the first column"""
        frame = self.frame.copy()
        epoch = (frame.index - pd.Timestamp("1970-01-01")) // pd.Timedelta(seconds=1)
        frame.insert(0, TIMESTAMP, np.asarray(epoch, dtype=np.int64))
        frame.to_csv(path, index=False, lineterminator="\n")


def _parse_timestamps(values, source):
    try:
        if pd.api.types.is_numeric_dtype(values):
            parsed = pd.to_datetime(values, unit="s")
        else:
            parsed = pd.to_datetime(values)
    except (ValueError, TypeError, OverflowError) as error:
        raise DataError(f"{source}: cannot parse timestamps: {error}") from None
    index = pd.DatetimeIndex(parsed)
    if index.tz is not None:
        index = index.tz_convert("UTC").tz_localize(None)
    if index.hasnans:
        raise DataError(f"{source}: missing timestamps")
    return index


def regularize(frame, source="series", sample_period=SAMPLE_PERIOD):
    """Validate timestamps and fill short gaps by holding the previous value

    Timestamps must increase strictly and lie on the sampling grid. Gaps of up
    to MAX_GAP samples are filled; longer gaps, or more than 5% missing
    samples overall, are rejected.
    """
    index = frame.index
    if len(index) == 0:
        raise DataError(f"{source}: no samples")
    if not index.is_monotonic_increasing or index.has_duplicates:
        raise DataError(f"{source}: timestamps are not strictly increasing")
    steps = np.asarray((index - index[0]) / sample_period, dtype=np.float64)
    if not np.allclose(steps, np.round(steps), rtol=0.0, atol=1e-6):
        raise DataError(
            f"{source}: timestamps are not on a {sample_period} sampling grid"
        )
    gaps = np.diff(np.round(steps).astype(np.int64)) - 1
    missing = int(gaps.sum()) if len(gaps) else 0
    if not missing:
        return frame
    total = len(index) + missing
    if missing > MAX_MISSING_FRACTION * total:
        raise DataError(
            f"{source}: {missing} of {total} samples are missing"
            f" (at most {MAX_MISSING_FRACTION:.0%} can be filled)"
        )
    longest = int(gaps.max())
    if longest > MAX_GAP:
        raise DataError(
            f"{source}: gap of {longest} samples after {index[int(gaps.argmax())]}"
            f" (at most {MAX_GAP} can be filled)"
        )
    grid = pd.date_range(index[0], index[-1], freq=sample_period)
    logger.warning(
        "%s: filled %d missing samples by holding the previous value",
        source,
        missing,
    )
    return frame.reindex(grid).ffill()


def ingest_csv(path, channel_map=None, sample_period=SAMPLE_PERIOD):
    """Read a meter CSV into a MeterSeries

    The first column holds timestamps (epoch seconds or ISO-8601). With no
    *channel_map*, every other column must be named `<entity>_<signal>`;
    otherwise *channel_map* maps column names to (entity, signal) pairs and
    other columns are ignored.
    """
    source = str(path)
    try:
        raw = pd.read_csv(path)
    except FileNotFoundError:
        raise DataError(f"{source}: file not found") from None
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as error:
        raise DataError(f"{source}: cannot read CSV: {error}") from None
    if raw.shape[1] < 2:
        raise DataError(f"{source}: needs a timestamp column and measurements")
    time_column = raw.columns[0]
    if channel_map is None:
        channel_map = {
            column: parse_column(column)
            for column in raw.columns
            if column != time_column
        }
    columns = {}
    for column, (entity, signal) in channel_map.items():
        if column not in raw.columns:
            raise DataError(f"{source}: missing column '{column}'")
        if signal not in SIGNALS:
            raise DataError(
                f"{source}: column '{column}' maps to unknown signal '{signal}'"
            )
        values = pd.to_numeric(raw[column], errors="coerce").to_numpy(dtype=np.float64)
        if not np.all(np.isfinite(values)):
            raise DataError(
                f"{source}: column '{column}' has missing or non-numeric values"
            )
        columns[column_name(entity, signal)] = values
    frame = pd.DataFrame(columns, index=_parse_timestamps(raw[time_column], source))
    frame = regularize(frame, source=source, sample_period=sample_period)
    logger.info("%s: %d samples, %d channels", source, len(frame), frame.shape[1])
    return MeterSeries(frame)


def ingest_signal_files(files_by_signal, meters, sample_period=SAMPLE_PERIOD):
    """Merge one-file-per-signal datasets (the AMPds2 layout)

    *files_by_signal* maps a signal kind to a CSV whose columns are meters;
    *meters* maps meter column names to entity names.
    """
    parts = []
    for signal, path in files_by_signal.items():
        channel_map = {meter: (entity, signal) for meter, entity in meters.items()}
        parts.append(ingest_csv(path, channel_map, sample_period).frame)
    if not parts:
        raise DataError("no signal files given")
    frame = pd.concat(parts, axis=1, join="inner")
    dropped = max(len(part) for part in parts) - len(frame)
    if dropped:
        logger.warning("dropped %d samples not present in every signal file", dropped)
    return MeterSeries(frame)


def power_triangle(active, phase, voltage):
    """Current, active, reactive and apparent power from P, theta and V

    S = I V, P = S cos(theta), Q = S sin(theta).
    """
    active = np.asarray(active, dtype=np.float64)
    phase = np.asarray(phase, dtype=np.float64)
    apparent = active / np.cos(phase)
    return {
        "I": apparent / voltage,
        "P": active,
        "Q": apparent * np.sin(phase),
        "S": apparent,
    }


@dataclass(frozen=True)
class PowerSample:
    """One electrical operating point"""

    current: float
    voltage: float
    phase: float
    apparent: float
    active: float
    reactive: float

    @classmethod
    def from_current(cls, current, voltage, phase):
        apparent = current * voltage
        return cls(
            current=current,
            voltage=voltage,
            phase=phase,
            apparent=apparent,
            active=apparent * math.cos(phase),
            reactive=apparent * math.sin(phase),
        )

    @classmethod
    def from_active(cls, active, phase, voltage):
        channels = power_triangle(active, phase, voltage)
        return cls(
            current=float(channels["I"]),
            voltage=voltage,
            phase=phase,
            apparent=float(channels["S"]),
            active=float(channels["P"]),
            reactive=float(channels["Q"]),
        )


@dataclass(frozen=True)
class ApplianceState:
    name: str
    power: float
    phase: float = 0.0


@dataclass(frozen=True)
class SyntheticAppliance:
    """Appliance modeled as a Markov chain over power states

    transitions[i][j] is the probability of moving from state i to state j
    within one minute. The chain starts in the first state.
    """

    name: str
    states: tuple
    transitions: tuple = ()

    def __post_init__(self):
        states = tuple(self.states)
        object.__setattr__(self, "states", states)
        prefix = f"appliances.{self.name}"
        if not states:
            raise ConfigError(f"{prefix}.states: needs at least one state")
        for index, state in enumerate(states):
            if not math.isfinite(state.power) or state.power < 0:
                raise ConfigError(
                    f"{prefix}.states.{index}.power: must be finite and"
                    f" non-negative, got {state.power}"
                )
            if not 0.0 <= state.phase < math.pi / 2:
                raise ConfigError(
                    f"{prefix}.states.{index}.phase: must be in [0, pi/2),"
                    f" got {state.phase}"
                )
        transitions = self.transitions
        if len(transitions) == 0 and len(states) == 1:
            transitions = ((1.0,),)
        matrix = np.asarray(transitions, dtype=np.float64)
        size = len(states)
        if matrix.shape != (size, size):
            raise ConfigError(
                f"{prefix}.transitions: must be a {size}x{size} matrix,"
                f" got shape {matrix.shape}"
            )
        if np.any(matrix < 0) or not np.allclose(matrix.sum(axis=1), 1.0, atol=1e-9):
            raise ConfigError(
                f"{prefix}.transitions: rows must be probabilities summing to 1"
            )
        object.__setattr__(
            self, "transitions", tuple(tuple(row) for row in matrix.tolist())
        )

    @property
    def powers(self):
        return np.array([state.power for state in self.states], dtype=np.float64)

    @property
    def phases(self):
        return np.array([state.phase for state in self.states], dtype=np.float64)

    def simulate(self, minutes, rng):
        """State index for each minute, exactly one active state per step"""
        states = np.zeros(minutes, dtype=np.intp)
        if len(self.states) == 1:
            return states
        cumulative = [list(np.cumsum(row)) for row in self.transitions]
        last = len(self.states) - 1
        draws = rng.random(minutes)
        state = 0
        for minute in range(minutes):
            states[minute] = state
            state = min(bisect.bisect_right(cumulative[state], draws[minute]), last)
        return states

    def stationary_distribution(self):
        matrix = np.asarray(self.transitions)
        size = len(self.states)
        system = np.vstack([matrix.T - np.eye(size), np.ones(size)])
        target = np.zeros(size + 1)
        target[-1] = 1.0
        distribution, *unused = np.linalg.lstsq(system, target, rcond=None)
        return distribution


def expected_power(appliance):
    """Long-run mean active power of a synthetic appliance"""
    return float(appliance.stationary_distribution() @ appliance.powers)


@dataclass(frozen=True)
class NoiseModel:
    """Gaussian jitter added to the aggregate on top of all sub-meters

    P and Q jitter are independent; S jitter has the combined standard
    deviation and I jitter is S jitter divided by the voltage.
    """

    active_sigma: float = 0.0
    reactive_sigma: float = 0.0

    def sample(self, minutes, voltage, rng):
        active = rng.normal(0.0, self.active_sigma, minutes)
        reactive = rng.normal(0.0, self.reactive_sigma, minutes)
        apparent = rng.normal(
            0.0, math.hypot(self.active_sigma, self.reactive_sigma), minutes
        )
        return {"I": apparent / voltage, "P": active, "Q": reactive, "S": apparent}


def synthesize_household(
    appliances,
    days,
    voltage=120.0,
    noise_model=None,
    seed=0,
    start=DEFAULT_START,
):
    """Simulate sub-meter and aggregate channels for a household

    Each appliance's I, P, Q, S follow from its state's (P, theta) at the
    nominal voltage; every aggregate channel is the sum of the appliance
    channels plus the noise channel.
    """
    if days < 1:
        raise ConfigError(f"days: must be at least 1, got {days}")
    if voltage <= 0:
        raise ConfigError(f"voltage: must be positive, got {voltage}")
    names = [appliance.name for appliance in appliances]
    for name in names:
        if not name or name in RESERVED_ENTITIES or names.count(name) > 1:
            raise ConfigError(f"appliances.{name}: name is reserved or used twice")
    noise_model = noise_model or NoiseModel()
    rng = np.random.default_rng(seed)
    minutes = int(round(days * DAY))
    index = pd.date_range(start, periods=minutes, freq=SAMPLE_PERIOD)

    sub_meters = {}
    totals = {signal: np.zeros(minutes) for signal in SIGNALS}
    for appliance in appliances:
        states = appliance.simulate(minutes, rng)
        channels = power_triangle(
            appliance.powers[states], appliance.phases[states], voltage
        )
        for signal in SIGNALS:
            sub_meters[column_name(appliance.name, signal)] = channels[signal]
            totals[signal] = totals[signal] + channels[signal]
    noise = noise_model.sample(minutes, voltage, rng)

    columns = {}
    for signal in SIGNALS:
        columns[column_name(AGGREGATE, signal)] = totals[signal] + noise[signal]
    columns.update(sub_meters)
    for signal in SIGNALS:
        columns[column_name(NOISE, signal)] = noise[signal]
    logger.info("synthesized %d appliances over %s days", len(appliances), days)
    return MeterSeries(pd.DataFrame(columns, index=index))


def noise_fraction(series, targets, signal="P"):
    """Share of the aggregate not explained by the target loads"""
    aggregate = series.values(AGGREGATE, signal).sum()
    if aggregate <= 0:
        raise DataError(f"aggregate {signal} sums to {aggregate}, noise is undefined")
    explained = sum(series.values(load, signal).sum() for load in targets)
    return float(1.0 - explained / aggregate)


@dataclass(frozen=True)
class Scenario:
    """What the network sees and what it has to reproduce

    In the noisy mode the inputs are the aggregate meter; in the denoised mode
    they are the sum of the target sub-meters. The output signal is the
    quantity the masks multiply, so it has to be one of the inputs.
    """

    mode: str = "noisy"
    target_loads: tuple = ()
    input_signals: tuple = ("P",)
    output_signal: str = "P"

    def __post_init__(self):
        object.__setattr__(self, "target_loads", tuple(self.target_loads))
        object.__setattr__(self, "input_signals", tuple(self.input_signals))
        if self.mode not in SCENARIO_MODES:
            raise ConfigError(
                f"scenario.mode: unknown mode '{self.mode}',"
                f" use one of {', '.join(SCENARIO_MODES)}"
            )
        if not self.target_loads:
            raise ConfigError("scenario.target_loads: needs at least one load")
        if len(set(self.target_loads)) != len(self.target_loads):
            raise ConfigError("scenario.target_loads: loads must be unique")
        if not self.input_signals:
            raise ConfigError("scenario.input_signals: needs at least one signal")
        for signal in self.input_signals:
            if signal not in SIGNALS:
                raise ConfigError(f"scenario.input_signals: unknown signal '{signal}'")
        if len(set(self.input_signals)) != len(self.input_signals):
            raise ConfigError("scenario.input_signals: signals must be unique")
        if self.output_signal not in SIGNALS:
            raise ConfigError(
                f"scenario.output_signal: unknown signal '{self.output_signal}'"
            )
        if self.output_signal not in self.input_signals:
            raise ConfigError(
                f"scenario.output_signal: '{self.output_signal}' must also be"
                " one of the input signals"
            )

    @property
    def mask_input_channel(self):
        return self.input_signals.index(self.output_signal)

    @property
    def output_columns(self):
        return [column_name(load, self.output_signal) for load in self.target_loads]

    def to_dict(self):
        return {
            "mode": self.mode,
            "target_loads": list(self.target_loads),
            "input_signals": list(self.input_signals),
            "output_signal": self.output_signal,
        }

    @classmethod
    def from_dict(cls, values, prefix="scenario"):
        known = {"mode", "target_loads", "input_signals", "output_signal"}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigError(f"{prefix}.{unknown[0]}: unknown scenario setting")
        return cls(**values)


@dataclass(frozen=True)
class ScenarioData:
    """Network inputs (time, signals) and targets (time, loads)"""

    scenario: Scenario
    inputs: np.ndarray
    targets: np.ndarray
    timestamps: pd.DatetimeIndex = field(default=None, repr=False)

    def __len__(self):
        return len(self.inputs)

    def slice(self, start, stop):
        timestamps = None if self.timestamps is None else self.timestamps[start:stop]
        return ScenarioData(
            self.scenario, self.inputs[start:stop], self.targets[start:stop], timestamps
        )


def build_scenario(series, scenario):
    """Arrange a series into network inputs and per-load targets"""
    for load in scenario.target_loads:
        if not series.has(load, scenario.output_signal):
            raise DataError(
                f"target load '{load}' has no {scenario.output_signal}"
                " sub-meter data"
            )
    channels = []
    for signal in scenario.input_signals:
        if scenario.mode == "denoised":
            total = np.zeros(len(series))
            for load in scenario.target_loads:
                if not series.has(load, signal):
                    raise DataError(
                        f"target load '{load}' has no {signal} sub-meter data"
                    )
                total = total + series.values(load, signal)
            channels.append(total)
        else:
            if not series.has(AGGREGATE, signal):
                raise DataError(f"aggregate has no {signal} measurements")
            channels.append(series.values(AGGREGATE, signal))
    targets = [
        series.values(load, scenario.output_signal) for load in scenario.target_loads
    ]
    return ScenarioData(
        scenario=scenario,
        inputs=np.stack(channels, axis=-1),
        targets=np.stack(targets, axis=-1),
        timestamps=series.timestamps,
    )


@dataclass(frozen=True)
class ScaleRecord:
    """Per-signal divisors used for normalization"""

    scales: dict

    def scale(self, signal):
        return self.scales[signal]

    def vector(self, signals):
        return np.array([self.scales[signal] for signal in signals], dtype=np.float64)

    def to_dict(self):
        return dict(self.scales)

    @classmethod
    def from_dict(cls, values):
        return cls({str(signal): float(scale) for signal, scale in values.items()})


def next_power_of_two(maximum):
    """Smallest power of two not below *maximum* (powers of two map to themselves)"""
    return float(2.0 ** np.ceil(np.log2(maximum)))


def compute_scales(values, signals):
    """Scale record from the per-channel maximum magnitude of *values*"""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise DataError("cannot normalize an empty series")
    scales = {}
    for channel, signal in enumerate(signals):
        maximum = float(np.max(np.abs(values[..., channel])))
        if maximum > 0:
            scales[signal] = next_power_of_two(maximum)
        else:
            logger.warning("channel %s is all zeros, using scale 1", signal)
            scales[signal] = 1.0
    return ScaleRecord(scales)


def normalize(values, signals, record=None):
    """Divide each channel by its scale; returns (scaled, record)

    Without *record* the scales are computed from *values* themselves.
    """
    values = np.asarray(values, dtype=np.float64)
    if record is None:
        record = compute_scales(values, signals)
    return values / record.vector(signals), record


def denormalize(values, signals, record):
    """Multiply each channel by its scale; one signal applies to every channel"""
    return np.asarray(values, dtype=np.float64) * record.vector(signals)


def normalize_scenario(data, record=None):
    """Normalize inputs per signal and targets by the output signal's scale"""
    scenario = data.scenario
    inputs, record = normalize(data.inputs, scenario.input_signals, record)
    targets = data.targets / record.scale(scenario.output_signal)
    return ScenarioData(scenario, inputs, targets, data.timestamps), record


def window_starts(length, window_length=DAY, overlap=511):
    """Start indices of windows covering a series of *length* samples

    Consecutive windows overlap by *overlap* samples; a last window aligned
    with the end of the series is added when the stride does not reach it.
    """
    if not 0 <= overlap < window_length:
        raise ConfigError(
            f"training.overlap: must be in [0, {window_length}), got {overlap}"
        )
    if length < window_length:
        raise DataError(
            f"series of {length} samples is shorter than one window"
            f" of {window_length}"
        )
    stride = window_length - overlap
    starts = list(range(0, length - window_length + 1, stride))
    if starts[-1] != length - window_length:
        starts.append(length - window_length)
    return np.array(starts, dtype=np.intp)


def window(values, window_length=DAY, overlap=511):
    """Stack overlapping windows of a (time, channels) array"""
    values = np.asarray(values)
    starts = window_starts(len(values), window_length, overlap)
    return np.stack([values[start : start + window_length] for start in starts])

