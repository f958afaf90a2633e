"""Run configuration: a versioned YAML file mapped onto the model dataclasses.

Validation errors carry the line of the offending key.
"""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from tbrfi.keyrate import SecurityParams
from tbrfi.photonics import ChannelModel, DetectorLayout, LayoutError, SourceModel

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class CoincidenceSettings:
    """Coincidence settings as configured; ``base_delay_ps = None`` means calibrate."""

    base_delay_ps: int | None = None
    slot_halfwidth_ps: int = 500
    window_halfwidth_ps: int | None = None


@dataclass(frozen=True)
class SweepSettings:
    n_signals: int = 3000
    block_time: float = 1.0
    trials: int = 300
    initial_phase: float = 0.0
    rate_grid: tuple = tuple(round(0.1 * k, 1) for k in range(31))
    reduction: float = 0.05


@dataclass(frozen=True)
class RunConfig:
    scenario: str = "custom"
    seed: int | None = None
    duration: float = 60.0
    block_duration: float = 1.0
    output_dir: str = "out"
    source: SourceModel = field(default_factory=SourceModel)
    channel: ChannelModel = field(default_factory=ChannelModel)
    layout: DetectorLayout = field(default_factory=DetectorLayout)
    coincidence: CoincidenceSettings = field(default_factory=CoincidenceSettings)
    security: SecurityParams = field(default_factory=SecurityParams)
    sweep: SweepSettings = field(default_factory=SweepSettings)

    def __post_init__(self) -> None:
        if self.duration < 0:
            raise ValueError("duration must be non-negative")
        if self.block_duration <= 0:
            raise ValueError("block_duration must be positive")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["layout"] = self.layout.to_dict()
        d["schema"] = SCHEMA_VERSION
        return d

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=list).encode()
        return hashlib.sha256(blob).hexdigest()


PRESETS: dict[str, dict] = {
    # ambient drift: intrinsic interferometer drift of ~0.6 mrad/s
    "paper_scenario_i": {
        "scenario": "paper_scenario_i",
        "source": {"visibility_z": 0.916, "visibility_xy": 0.885, "phase0": 0.3, "phase_rate": 0.0006},
    },
    # piezo-driven 0.1 rad/s ramp; visibilities from the scenario's averages
    "paper_scenario_ii": {
        "scenario": "paper_scenario_ii",
        "source": {"visibility_z": 0.932, "visibility_xy": 0.865, "phase0": 0.0, "phase_rate": 0.1},
    },
}

_SECTIONS = {
    "source": SourceModel,
    "channel": ChannelModel,
    "coincidence": CoincidenceSettings,
    "security": SecurityParams,
    "sweep": SweepSettings,
}
_TOP_KEYS = {"schema", "scenario", "seed", "duration", "block_duration", "output_dir",
             "preset", "layout", *_SECTIONS}


def _node_lines(node, prefix=()) -> dict:
    """Map key paths to 1-based line numbers from a composed YAML node."""
    lines = {}
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            path = prefix + (k.value,)
            lines[path] = k.start_mark.line + 1
            lines.update(_node_lines(v, path))
    return lines


def _loc(source: str, lines: dict, path: tuple) -> str:
    while path and path not in lines:
        path = path[:-1]
    return f"{source}:{lines[path]}" if path else source


def _deep_merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = v
    return out


def _coerce(value, type_name: str, source: str, lines: dict, path: tuple):
    # YAML 1.1 reads "1e7" as a string; accept it for numeric fields
    if isinstance(value, bool) or value is None:
        return value
    try:
        if type_name == "float" and isinstance(value, (str, int)):
            return float(value)
        if type_name.startswith("int") and isinstance(value, str):
            return int(float(value))
    except ValueError as exc:
        raise ConfigError(f"{_loc(source, lines, path)}: '{path[-1]}' expects a number, "
                          f"got {value!r}") from exc
    return value


def _build_section(cls, data: Any, name: str, source: str, lines: dict):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{_loc(source, lines, (name,))}: section '{name}' must be a mapping")
    known = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f"{_loc(source, lines, (name, key))}: unknown key '{key}' in "
                              f"section '{name}' (known: {', '.join(sorted(known))})")
        if isinstance(value, list):
            value = tuple(tuple(v) if isinstance(v, list) else v for v in value)
        kwargs[key] = _coerce(value, known[key].type, source, lines, (name, key))
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{_loc(source, lines, (name,))}: invalid '{name}' section: {exc}") from exc


def config_from_mapping(data: dict, source: str = "<config>", lines: dict | None = None) -> RunConfig:
    lines = lines or {}
    data = dict(data or {})
    schema = data.pop("schema", SCHEMA_VERSION)
    if schema != SCHEMA_VERSION:
        raise ConfigError(f"{_loc(source, lines, ('schema',))}: unsupported schema version {schema}")
    for key in data:
        if key not in _TOP_KEYS:
            raise ConfigError(f"{_loc(source, lines, (key,))}: unknown top-level key '{key}'")
    preset = data.pop("preset", None)
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"{_loc(source, lines, ('preset',))}: unknown preset '{preset}' "
                              f"(available: {', '.join(PRESETS)})")
        data = _deep_merge(PRESETS[preset], data)
    kwargs = {}
    for name, cls in _SECTIONS.items():
        kwargs[name] = _build_section(cls, data.pop(name, None), name, source, lines)
    layout = data.pop("layout", None)
    if layout is not None:
        try:
            kwargs["layout"] = DetectorLayout.from_dict(layout)
        except (KeyError, TypeError, ValueError, LayoutError) as exc:
            raise ConfigError(f"{_loc(source, lines, ('layout',))}: invalid layout: {exc}") from exc
    for key, value in data.items():
        kwargs[key] = value
    try:
        return RunConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: {exc}") from exc


def load_config(path=None, preset: str | None = None) -> RunConfig:
    """Read a YAML config (optionally layered on a preset)."""
    if path is None:
        return config_from_mapping({"preset": preset} if preset else {})
    text = Path(path).read_text()
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{path}:{mark.line + 1}" if mark else str(path)
        raise ConfigError(f"{where}: YAML syntax error: {getattr(exc, 'problem', exc)}") from exc
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}:1: config must be a mapping")
    if preset and "preset" not in data:
        data["preset"] = preset
    return config_from_mapping(data, str(path), _node_lines(node))


def dump_config(cfg: RunConfig) -> str:
    d = cfg.to_dict()
    d = json.loads(json.dumps(d, default=list))
    order = ["schema", "scenario", "seed", "duration", "block_duration", "output_dir"]
    ordered = {k: d.pop(k) for k in order}
    ordered.update(d)
    return yaml.safe_dump(ordered, sort_keys=False)
