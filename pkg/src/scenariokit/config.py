"""Pipeline configuration: JSON file + SAFR_* environment overrides.

Sections: paths, tagger, query, safety, plus a top-level seed. Environment
variables use SAFR_<SECTION>_<FIELD> (e.g. SAFR_PATHS_DATA_DIR,
SAFR_QUERY_OVERLAP_SLACK, SAFR_SEED) and are applied after the file.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
from dataclasses import dataclass, field

from .tagging import TaggerConfig

ENV_PREFIX = "SAFR_"


class ConfigError(ValueError):
    """Bad configuration; the message carries the offending field path."""


@dataclass
class PathsConfig:
    data_dir: str = "data"
    map: str = "map.json"
    index_dir: str = "index"
    out_dir: str = "out"


@dataclass
class QueryConfig:
    overlap_slack: float = 2.0


@dataclass
class SafetyConfig:
    ttc_threshold: float = 1.5
    unsafe_fraction_max: float = 0.1
    ttc_floor: float = 0.5


@dataclass
class Config:
    paths: PathsConfig = field(default_factory=PathsConfig)
    tagger: TaggerConfig = field(default_factory=TaggerConfig)
    query: QueryConfig = field(default_factory=QueryConfig)
    safety: SafetyConfig = field(default_factory=SafetyConfig)
    seed: int = 0


# Friendlier degree-based aliases for the angle thresholds.
_TAGGER_DEG_ALIASES = {
    "turn_angle_deg": "turn_angle_rad",
    "lane_change_heading_cap_deg": "lane_change_heading_cap_rad",
}


def _apply_section(obj, section: str, data: dict) -> None:
    fields = {f.name: f for f in dataclasses.fields(obj)}
    for key, value in data.items():
        target = key
        if isinstance(obj, TaggerConfig) and key in _TAGGER_DEG_ALIASES:
            target = _TAGGER_DEG_ALIASES[key]
            value = math.radians(float(value))
        if target not in fields:
            raise ConfigError(f"unknown config field {section}.{key}")
        current = getattr(obj, target)
        try:
            if isinstance(current, bool):
                value = bool(value)
            elif isinstance(current, int) and not isinstance(value, bool):
                value = int(value)
            elif isinstance(current, float):
                value = float(value)
            elif isinstance(current, str):
                value = str(value)
        except (TypeError, ValueError):
            raise ConfigError(f"bad value for {section}.{key}: {value!r}") from None
        setattr(obj, target, value)


def load_config(path: str | None = None, env: dict | None = None) -> Config:
    """Defaults, then the JSON file (if given), then SAFR_* overrides."""
    config = Config()
    sections = {
        "paths": config.paths,
        "tagger": config.tagger,
        "query": config.query,
        "safety": config.safety,
    }
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                data = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}") from None
        if not isinstance(data, dict):
            raise ConfigError("config root must be an object")
        for section, payload in data.items():
            if section == "seed":
                config.seed = int(payload)
                continue
            if section not in sections:
                raise ConfigError(f"unknown config section {section!r}")
            if not isinstance(payload, dict):
                raise ConfigError(f"config section {section!r} must be an object")
            _apply_section(sections[section], section, payload)

    env = os.environ if env is None else env
    for name, raw in env.items():
        if not name.startswith(ENV_PREFIX):
            continue
        rest = name[len(ENV_PREFIX) :]
        if rest == "SEED":
            config.seed = int(raw)
            continue
        section_name, _, field_name = rest.partition("_")
        section = sections.get(section_name.lower())
        if section is None or not field_name:
            raise ConfigError(f"unrecognized environment override {name}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        _apply_section(section, section_name.lower(), {field_name.lower(): value})
    return config
