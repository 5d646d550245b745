"""
Configuration Module

Builds the RunConfig that every subcommand resolves before running:
documented defaults, overridden by a JSON document, overridden by flags.

The JSON document is either a bare RunConfig ({"channel": {...}, ...}) or a
run.json written by a previous run, whose "config" key is used, so a saved
run.json reproduces that run.
"""

import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from molcom_demod.channel_models import ChannelParams
from molcom_demod.demodulator import CnnConfig, TrainConfig
from molcom_demod.errors import ConfigError, DomainError
from molcom_demod.preprocess import PreprocessConfig
from molcom_demod.testbed_sim import ModulationConfig, NoiseConfig

logger = logging.getLogger(__name__)

RUN_FILE = "run.json"


@dataclass(frozen=True)
class SeedConfig:
    master: int = 0
    split: int = 0


@dataclass(frozen=True)
class RunConfig:
    """Resolved configuration of one run."""

    channel: ChannelParams = field(default_factory=ChannelParams)
    modulation: ModulationConfig = field(default_factory=ModulationConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    cnn: CnnConfig = field(default_factory=CnnConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    seeds: SeedConfig = field(default_factory=SeedConfig)

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        data["preprocess"]["split_ratios"] = list(self.preprocess.split_ratios)
        return data

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RunConfig":
        """
        Build a RunConfig from a (possibly partial) nested dict.

        Raises:
            ConfigError: Unknown section or key, or a value violating an invariant
        """
        if not isinstance(data, dict):
            raise ConfigError(f"config must be a JSON object, got {type(data).__name__}")
        sections = {f.name: f for f in fields(cls)}
        unknown = set(data) - set(sections)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")

        defaults = cls()
        resolved = {}
        for name in sections:
            current = getattr(defaults, name)
            resolved[name] = _merge_section(name, current, data.get(name, {}))
        return cls(**resolved)

    def with_overrides(self, overrides: dict[str, Any]) -> "RunConfig":
        """
        Apply dotted-key overrides such as {"modulation.alphabet_size": 6}.

        None values are skipped so unset CLI flags leave the config alone.
        """
        nested: dict[str, dict[str, Any]] = {}
        for key, value in overrides.items():
            if value is None:
                continue
            section, _, name = key.partition(".")
            if not name:
                raise ConfigError(f"override key must be 'section.field', got {key!r}")
            nested.setdefault(section, {})[name] = value
        if not nested:
            return self
        data = self.to_dict()
        for section, values in nested.items():
            if section not in data:
                raise ConfigError(f"unknown config section {section!r}")
            data[section].update(values)
        return RunConfig.from_dict(data)


def _merge_section(name: str, current, values: dict[str, Any]):
    if not isinstance(values, dict):
        raise ConfigError(f"config section {name!r} must be an object")
    known = {f.name for f in fields(current)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {sorted(unknown)}")
    try:
        return replace(current, **values)
    except (DomainError, TypeError, ValueError) as e:
        raise ConfigError(f"invalid {name!r} config: {e}") from e


def load_run_config(path: Path | None = None, overrides: dict[str, Any] | None = None) -> RunConfig:
    """
    Resolve default < file < overrides.

    Args:
        path: Optional JSON config or run.json
        overrides: Dotted-key values from flags

    Raises:
        ConfigError: Unreadable or invalid document
    """
    config = RunConfig()
    if path is not None:
        try:
            with open(path, encoding="utf-8") as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        if isinstance(data, dict) and "config" in data and "command" in data:
            data = data["config"]
        config = RunConfig.from_dict(data)
        logger.debug(f"Loaded config from {path}")
    return config.with_overrides(overrides or {})


def write_run_record(
    out_dir: Path,
    command: str,
    config: RunConfig,
    args: dict[str, Any],
    seed: int | None = None,
) -> Path:
    """Write run.json echoing the command, resolved config, seed and arguments."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    record = {
        "command": command,
        "config": config.to_dict(),
        "seed": config.seeds.master if seed is None else seed,
        "args": {k: (str(v) if isinstance(v, Path) else v) for k, v in args.items()},
    }
    path = out_dir / RUN_FILE
    with open(path, "w", encoding="utf-8") as f:
        json.dump(record, f, indent=2, sort_keys=True)
    return path
