"""JSON run configuration."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

from .channel import ScenarioConfig
from .stream import EngineConfig

DEFAULT_SNRS = (6.0, 10.0, 14.0, 18.0, 22.0, 26.0, 30.0)

# key -> (type check, default)
_INT = "int"
_NUM = "number"
SCHEMA = {
    "carrier_hz": (_NUM, 28e9),
    "n_bs": (_INT, 64),
    "n_ue": (_INT, 2),
    "n_c": (_INT, 432),
    "subcarrier_spacing_hz": (_NUM, 120e3),
    "spatial_scale": (_INT, 4),
    "freq_scale": (_INT, 4),
    "snr_db": ("snr", list(DEFAULT_SNRS)),
    "velocity_kmh": (_NUM, 30.0),
    "n_paths": (_INT, 8),
    "seed": (_INT, 0),
    "sample_count": (_INT, 16),
    "model_kind": ("kind", "student"),
    "t_m": (_INT, 4),
    "t_n": (_INT, 4),
    "pipeline_depth": (_INT, 50),
}


class ConfigError(Exception):
    """Configuration problem; the CLI maps it to exit code 2."""


@dataclass
class RunConfig:
    scenario: ScenarioConfig
    snr_levels: tuple[float, ...]
    sample_count: int
    model_kind: str
    engine: EngineConfig
    seed: int
    paths: dict[str, str] = field(default_factory=dict)

    def scenario_for(self, index: int) -> ScenarioConfig:
        """Per-sample scenario: SNR cycles through the levels, seed = base + index."""
        snr = self.snr_levels[index % len(self.snr_levels)]
        return replace(self.scenario, snr_db=snr, seed=self.seed + index)


def _is_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v):
    return (isinstance(v, (int, float)) and not isinstance(v, bool)
            and (math.isfinite(v) or v == math.inf))


def _check_type(key, kind, v):
    ok = {
        _INT: lambda: _is_int(v),
        _NUM: lambda: _is_num(v),
        "snr": lambda: _is_num(v) or (isinstance(v, list) and v and all(_is_num(x) for x in v)),
        "kind": lambda: v in ("student", "teacher"),
    }[kind]()
    if not ok:
        raise ConfigError(f"constraint violation: key {key!r} has invalid value {v!r}")


def config_from_dict(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("malformed config: top level must be a JSON object")
    unknown = sorted(set(raw) - set(SCHEMA))
    if unknown:
        raise ConfigError(f"unknown config key {unknown[0]!r}")
    vals = {}
    for key, (kind, default) in SCHEMA.items():
        v = raw.get(key, default)
        _check_type(key, kind, v)
        vals[key] = v
    snrs = vals["snr_db"] if isinstance(vals["snr_db"], list) else [vals["snr_db"]]
    if vals["sample_count"] < 1:
        raise ConfigError("constraint violation: sample_count must be >= 1")
    if not 0 <= vals["seed"] < 2**64:
        raise ConfigError("constraint violation: seed must fit in 64 bits")
    for key in ("n_bs", "n_ue", "n_c", "spatial_scale", "freq_scale", "n_paths", "t_m", "t_n"):
        if vals[key] < 1:
            raise ConfigError(f"constraint violation: {key} must be >= 1")
    for key in ("n_bs", "n_ue", "n_c"):
        if vals[key] > 0xFFFF:
            raise ConfigError(f"constraint violation: {key} must fit in 16 bits")
    try:
        scenario = ScenarioConfig(
            carrier_hz=float(vals["carrier_hz"]), n_bs=vals["n_bs"], n_ue=vals["n_ue"],
            n_c=vals["n_c"], subcarrier_spacing_hz=float(vals["subcarrier_spacing_hz"]),
            spatial_scale=vals["spatial_scale"], freq_scale=vals["freq_scale"],
            snr_db=float(snrs[0]), velocity_kmh=float(vals["velocity_kmh"]),
            n_paths=vals["n_paths"], seed=vals["seed"],
        )
        engine = EngineConfig(vals["t_m"], vals["t_n"], vals["pipeline_depth"])
    except ValueError as e:
        raise ConfigError(f"constraint violation: {e}") from None
    return RunConfig(scenario, tuple(float(s) for s in snrs), vals["sample_count"],
                     vals["model_kind"], engine, vals["seed"])


def parse_config(path) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        raw = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"malformed config {p}: {e}") from None
    return config_from_dict(raw)
