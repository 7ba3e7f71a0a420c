"""JSON configuration of experiments and synthetic households

Relative paths inside a configuration file are resolved against the
directory of that file.
"""

import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

from .data import (
    DEFAULT_START,
    DEFERRABLE_LOADS,
    ApplianceState,
    NoiseModel,
    Scenario,
    SyntheticAppliance,
)
from .errors import ConfigError
from .network import NetworkConfig
from .training import TrainConfig

logger = logging.getLogger(__name__)

DERIVED_NETWORK_FIELDS = ("input_channels", "output_loads", "mask_input_channel")


def resolve_path(path, root_file):
    """Creates an absolute path from a path relative to root_file.

    Returns path as is if the input path is absolute.
    """
    path = Path(path)
    if path.is_absolute():
        return path
    base = Path(root_file).parent
    path = base / path
    return path.resolve()


def read_json(path):
    """Return the JSON object stored in path"""
    try:
        with open(path, encoding="utf-8") as file_handle:
            content = json.load(file_handle)
    except FileNotFoundError:
        raise ConfigError(f"{path}: file not found") from None
    except json.JSONDecodeError as error:
        raise ConfigError(f"{path}: not properly formatted JSON: {error}") from None
    if not isinstance(content, dict):
        raise ConfigError(f"{path}: must contain a JSON object")
    return content


def _section(values, key, prefix=""):
    section = values.get(key, {})
    if not isinstance(section, dict):
        raise ConfigError(
            f"{prefix}{key}: must be an object, not {type(section).__name__}"
        )
    return section


def _number(values, key, default, prefix, minimum=None):
    value = values.get(key, default)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{prefix}.{key}: must be a number, got {value!r}")
    if not math.isfinite(value) or (minimum is not None and value < minimum):
        raise ConfigError(
            f"{prefix}.{key}: must be finite and at least {minimum}, got {value!r}"
        )
    return value


@dataclass(frozen=True)
class Household:
    """Synthetic household description"""

    title: str
    appliances: tuple
    days: float = 30
    voltage: float = 120.0
    noise: NoiseModel = field(default_factory=NoiseModel)
    seed: int = 0
    start: str = DEFAULT_START
    targets: tuple = ()


def appliance_from_dict(values, prefix):
    if not isinstance(values, dict) or "name" not in values:
        raise ConfigError(f"{prefix}: appliance needs a name")
    name = values["name"]
    states = values.get("states")
    if not isinstance(states, list) or not states:
        raise ConfigError(f"{prefix}.{name}.states: must be a non-empty list")
    parsed = []
    for index, state in enumerate(states):
        state_prefix = f"{prefix}.{name}.states.{index}"
        if not isinstance(state, dict):
            raise ConfigError(f"{state_prefix}: must be an object")
        parsed.append(
            ApplianceState(
                name=str(state.get("name", index)),
                power=float(_number(state, "power", None, state_prefix)),
                phase=float(_number(state, "phase", 0.0, state_prefix)),
            )
        )
    transitions = values.get("transitions", [])
    try:
        return SyntheticAppliance(
            name=name, states=tuple(parsed), transitions=tuple(map(tuple, transitions))
        )
    except TypeError:
        raise ConfigError(f"{prefix}.{name}.transitions: must be a matrix") from None


def household_from_dict(values, prefix="household"):
    appliances = values.get("appliances")
    if not isinstance(appliances, list):
        raise ConfigError(f"{prefix}.appliances: must be a list")
    noise = _section(values, "noise", f"{prefix}.")
    noise_prefix = f"{prefix}.noise"
    targets = values.get("targets", [])
    names = {item.get("name") for item in appliances if isinstance(item, dict)}
    if (
        not isinstance(targets, list)
        or not all(isinstance(name, str) for name in targets)
        or not set(targets) <= names
    ):
        raise ConfigError(f"{prefix}.targets: must be a list of appliance names")
    return Household(
        title=str(values.get("title", "")),
        appliances=tuple(
            appliance_from_dict(item, f"{prefix}.appliances") for item in appliances
        ),
        days=_number(values, "days", 30, prefix, minimum=1),
        voltage=float(_number(values, "voltage", 120.0, prefix)),
        noise=NoiseModel(
            active_sigma=float(_number(noise, "active_sigma", 0.0, noise_prefix, 0)),
            reactive_sigma=float(
                _number(noise, "reactive_sigma", 0.0, noise_prefix, 0)
            ),
        ),
        seed=int(_number(values, "seed", 0, prefix, minimum=0)),
        start=str(values.get("start", DEFAULT_START)),
        targets=tuple(targets),
    )


def load_household(path):
    return household_from_dict(read_json(path))


@dataclass(frozen=True)
class DataConfig:
    """Where the meter data comes from

    Exactly one source: a synthetic household, one CSV file, or one CSV file
    per signal kind with meters as columns (signal_files plus meters).
    """

    synthetic: Path = None
    csv: Path = None
    channel_map: dict = None
    signal_files: dict = None
    meters: dict = None
    days: float = None

    @classmethod
    def from_dict(cls, values, root_file, prefix="data"):
        known = {"synthetic", "csv", "channel_map", "signal_files", "meters", "days"}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigError(f"{prefix}.{unknown[0]}: unknown data setting")
        sources = [key for key in ("synthetic", "csv", "signal_files") if key in values]
        if len(sources) != 1:
            raise ConfigError(
                f"{prefix}: give exactly one of 'synthetic', 'csv' or 'signal_files'"
            )
        channel_map = values.get("channel_map")
        if channel_map is not None:
            if not isinstance(channel_map, dict):
                raise ConfigError(f"{prefix}.channel_map: must be an object")
            channel_map = {
                column: tuple(target) for column, target in channel_map.items()
            }
            for column, target in channel_map.items():
                if len(target) != 2:
                    raise ConfigError(
                        f"{prefix}.channel_map.{column}: must be [entity, signal]"
                    )
        signal_files = values.get("signal_files")
        meters = values.get("meters")
        if signal_files is not None:
            if not isinstance(signal_files, dict) or not signal_files:
                raise ConfigError(f"{prefix}.signal_files: must be a non-empty object")
            signal_files = {
                signal: resolve_path(path, root_file)
                for signal, path in signal_files.items()
            }
            if not isinstance(meters, dict) or not meters:
                raise ConfigError(f"{prefix}.meters: needed with signal_files")
        days = values.get("days")
        if days is not None:
            days = _number(values, "days", None, prefix, minimum=1)
        return cls(
            synthetic=(
                resolve_path(values["synthetic"], root_file)
                if "synthetic" in values
                else None
            ),
            csv=resolve_path(values["csv"], root_file) if "csv" in values else None,
            channel_map=channel_map,
            signal_files=signal_files,
            meters=dict(meters) if meters else None,
            days=days,
        )

    def to_dict(self):
        result = {}
        if self.synthetic is not None:
            result["synthetic"] = str(self.synthetic)
        if self.csv is not None:
            result["csv"] = str(self.csv)
        if self.channel_map is not None:
            result["channel_map"] = {k: list(v) for k, v in self.channel_map.items()}
        if self.signal_files is not None:
            result["signal_files"] = {k: str(v) for k, v in self.signal_files.items()}
            result["meters"] = dict(self.meters)
        if self.days is not None:
            result["days"] = self.days
        return result


def scenario_from_dict(values, prefix="scenario"):
    values = dict(values)
    if values.get("target_loads") == "deferrable":
        values["target_loads"] = DEFERRABLE_LOADS
    for key in ("target_loads", "input_signals"):
        if key in values and not isinstance(values[key], (list, tuple)):
            raise ConfigError(f"{prefix}.{key}: must be a list")
    try:
        return Scenario.from_dict(values, prefix)
    except TypeError as error:
        raise ConfigError(f"{prefix}: {error}") from None


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment: data, scenario, network overrides and training"""

    title: str
    path: Path
    seed: int
    data: DataConfig
    scenario: Scenario
    network: dict
    training: TrainConfig

    def network_config(self, scenario=None):
        """Network topology with channel counts derived from the scenario"""
        scenario = scenario or self.scenario
        return NetworkConfig.from_dict(
            dict(
                self.network,
                input_channels=len(scenario.input_signals),
                output_loads=len(scenario.target_loads),
                mask_input_channel=scenario.mask_input_channel,
            )
        )

    def with_seed(self, seed):
        return replace(self, seed=seed, training=replace(self.training, seed=seed))

    def with_scenario(self, scenario):
        return replace(self, scenario=scenario)

    def with_network(self, network_config):
        values = network_config.to_dict()
        for name in DERIVED_NETWORK_FIELDS:
            del values[name]
        return replace(self, network=values)

    def to_dict(self):
        return {
            "title": self.title,
            "seed": self.seed,
            "data": self.data.to_dict(),
            "scenario": self.scenario.to_dict(),
            "network": self.network_config().to_dict(),
            "training": self.training.to_dict(),
        }


def experiment_from_dict(values, root_file):
    known = {"title", "seed", "data", "scenario", "network", "training"}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"{unknown[0]}: unknown experiment section")
    for key in ("data", "scenario"):
        if key not in values:
            raise ConfigError(f"{key}: section is required")
    seed = int(_number(values, "seed", 0, "experiment", minimum=0))
    network = _section(values, "network")
    for name in DERIVED_NETWORK_FIELDS:
        if name in network:
            raise ConfigError(f"network.{name}: derived from the scenario, remove it")
    training = dict(_section(values, "training"))
    training.setdefault("seed", seed)
    experiment = ExperimentConfig(
        title=str(values.get("title", Path(root_file).stem)),
        path=Path(root_file),
        seed=seed,
        data=DataConfig.from_dict(_section(values, "data"), root_file),
        scenario=scenario_from_dict(_section(values, "scenario")),
        network=dict(network),
        training=TrainConfig.from_dict(training),
    )
    # fail early on an invalid topology
    experiment.network_config()
    return experiment


def load_experiment(path):
    return experiment_from_dict(read_json(path), path)
