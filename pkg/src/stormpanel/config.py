"""Flat key=value run configuration.

One ``key = value`` assignment per line; ``#`` starts a comment.  Unknown
keys are errors (typo guard).  Relative paths resolve against the config
file's directory.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field

from .errors import ConfigError

_PATH_KEYS = ("tracks", "precip", "employment", "entities", "covariates", "landmask", "output_dir")

#: key -> (parser, default); None default means the key may be absent.
_SCHEMA = {
    "tracks": (str, None),
    "precip": (str, None),
    "employment": (str, None),
    "entities": (str, None),
    "covariates": (str, None),
    "landmask": (str, None),
    "output_dir": (str, None),
    "radius_km": (float, 200.0),
    "min_employment": (float, 100.0),
    "precip_window_days": (int, 3),
    "strong_wind_kt": (float, 64.0),
    "extreme_wind_kt": (float, 96.0),
    "extreme_precip_mm": (float, 150.0),
    "min_group": (int, 200),
    "k_folds": (int, 5),
    "n_trees": (int, 300),
    "max_depth": (int, 0),  # 0 = unlimited
    "min_samples_leaf": (int, 5),
    "features_per_split": (int, 0),  # 0 = ceil(p/3)
    "bootstrap_resamples": (int, 1000),
    "seed": (int, 42),
    "target_sector": (str, "service"),
    "ownership": (str, "private"),
    "sectors": (str, "all"),
    "scenario_wind_factor": (float, 1.05),
    "scenario_precip_factor": (float, 1.14),
}

_POSITIVE = (
    "radius_km", "precip_window_days", "strong_wind_kt", "extreme_wind_kt",
    "extreme_precip_mm", "k_folds", "n_trees", "min_samples_leaf",
    "bootstrap_resamples", "scenario_wind_factor", "scenario_precip_factor",
)


@dataclass
class RunConfig:
    path: str
    values: dict[str, object]
    config_hash: str
    base_dir: str = field(default="")

    def __getattr__(self, name):
        values = object.__getattribute__(self, "values")
        if name in values:
            return values[name]
        raise AttributeError(name)

    def input_path(self, key: str) -> str:
        value = self.values.get(key)
        if value is None:
            raise ConfigError(f"{self.path}: config key {key!r} is required for this command")
        return os.path.normpath(os.path.join(self.base_dir, str(value)))

    def require_inputs(self, keys) -> dict[str, str]:
        """Resolve input paths and verify each file exists."""
        out = {}
        for key in keys:
            p = self.input_path(key)
            if not os.path.isfile(p):
                raise ConfigError(f"{self.path}: {key} file not found: {p}")
            out[key] = p
        return out

    @property
    def outdir(self) -> str:
        return self.input_path("output_dir")

    def thresholds(self) -> dict[str, float]:
        return {
            "strong_wind_kt": self.values["strong_wind_kt"],
            "extreme_wind_kt": self.values["extreme_wind_kt"],
            "extreme_precip_mm": self.values["extreme_precip_mm"],
        }


def parse_run_config(path) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ConfigError(f"{path}: config is not UTF-8 text") from exc
    values: dict[str, object] = {k: v for k, (_, v) in _SCHEMA.items() if v is not None}
    seen = set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, _, value = stripped.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in _SCHEMA:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        if key in seen:
            raise ConfigError(f"{path}:{lineno}: duplicate config key {key!r}")
        seen.add(key)
        parser, _ = _SCHEMA[key]
        try:
            values[key] = parser(value)
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {value!r}") from exc
    for key in _POSITIVE:
        if key in values and float(values[key]) <= 0:
            raise ConfigError(f"{path}: {key} must be positive")
    for key in ("min_employment", "max_depth", "features_per_split", "min_group"):
        if float(values[key]) < 0:
            raise ConfigError(f"{path}: {key} must be non-negative")
    if values["seed"] < 0:
        raise ConfigError(f"{path}: seed must be non-negative")
    if values["k_folds"] < 2:
        raise ConfigError(f"{path}: k_folds must be at least 2")
    if values["output_dir"] is None:
        raise ConfigError(f"{path}: output_dir is required")
    return RunConfig(
        path=str(path),
        values=values,
        config_hash=hashlib.sha256(raw).hexdigest(),
        base_dir=os.path.dirname(os.path.abspath(path)),
    )
