"""Run configuration: a versioned JSON file, environment overrides and flags."""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .errors import ConfigError, VersionError

CONFIG_VERSION = 1
ENV_PREFIX = "GAMMORT_"
MODES = ("multi", "single")


@dataclass(frozen=True)
class RunConfig:
    data_dir: str | None = None
    countries: tuple = ("AUT", "CZE")
    genders: tuple = ("female", "male")
    year_range: tuple = (1961, 2019)
    cutoff: int = 2010
    split_age: int = 40
    omega: int = 100
    k: int = 10
    k_fs: int = 5
    eps: float = 0.1
    threshold: float = 0.1
    use_trimmed: bool = True
    horizon: int = 9
    interval_z: float | None = None
    out: str = "gammort-out"
    mode: str = "multi"
    workers: int = 1
    seed: int = 0
    max_iter: int = 200
    max_lag: int = 20
    synth_noise: float = 0.03
    version: int = CONFIG_VERSION

    def validate(self) -> "RunConfig":
        y0, y1 = self.year_range
        if y1 < y0:
            raise ConfigError("year_range", f"end {y1} before start {y0}")
        if not y0 + 2 <= self.cutoff <= y1:
            raise ConfigError("cutoff", f"{self.cutoff} must lie in {y0 + 2}..{y1} (at least 3 training years)")
        if self.horizon < 1:
            raise ConfigError("horizon", "must be at least 1")
        if self.threshold <= 0:
            raise ConfigError("threshold", "must be positive")
        if self.mode not in MODES:
            raise ConfigError("mode", f"must be one of {MODES}")
        if not 0 < self.split_age < self.omega:
            raise ConfigError("split_age", f"must lie strictly between 0 and omega={self.omega}")
        if self.k < 3 or self.k_fs < 3:
            raise ConfigError("k", "basis dimensions must be at least 3")
        if self.eps < 0:
            raise ConfigError("eps", "must be nonnegative")
        if not self.countries:
            raise ConfigError("countries", "at least one country code is required")
        if self.mode == "multi" and len(self.genders) * len(self.countries) < 2:
            raise ConfigError("countries", "multi mode needs at least two populations")
        if self.workers < 1:
            raise ConfigError("workers", "must be at least 1")
        if self.version != CONFIG_VERSION:
            raise VersionError(f"config version {self.version} is not {CONFIG_VERSION}")
        return self

    @property
    def test_horizon(self) -> int:
        return self.year_range[1] - self.cutoff

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("countries", "genders", "year_range"):
            d[key] = list(d[key])
        return d

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(name: str, value):
    """Convert a JSON value or an environment string to the field's type."""
    if name not in _FIELD_TYPES:
        raise ConfigError(name, "unknown configuration field")
    current = getattr(RunConfig(), name)
    try:
        if name in ("countries", "genders"):
            items = value.split(",") if isinstance(value, str) else list(value)
            return tuple(s.strip() for s in items if s.strip())
        if name == "year_range":
            items = value.replace("-", ",").split(",") if isinstance(value, str) else list(value)
            lo, hi = (int(v) for v in items)
            return (lo, hi)
        if value is None or (isinstance(value, str) and value.lower() in ("", "none", "null")):
            if name in ("data_dir", "interval_z"):
                return None
            raise ValueError("value required")
        if isinstance(current, bool):
            if isinstance(value, str):
                if value.lower() not in ("1", "0", "true", "false", "yes", "no"):
                    raise ValueError(f"not a boolean: {value!r}")
                return value.lower() in ("1", "true", "yes")
            return bool(value)
        if isinstance(current, int) and not isinstance(current, bool):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(f"not an integer: {value!r}")
            return int(value)
        if isinstance(current, float) or name == "interval_z":
            return float(value)
        return str(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(name, f"invalid value {value!r} ({exc})") from None


def env_overrides(environ=None) -> dict:
    environ = os.environ if environ is None else environ
    out = {}
    for key, value in environ.items():
        if key.startswith(ENV_PREFIX):
            name = key[len(ENV_PREFIX):].lower()
            if name in _FIELD_TYPES:
                out[name] = _coerce(name, value)
    return out


def load_config(path=None, overrides: dict | None = None, environ=None) -> RunConfig:
    """Defaults, then the JSON file, then ``GAMMORT_*`` environment variables,
    then explicit ``overrides`` (command-line flags); the result is validated."""
    values = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError("config", f"file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError("config", f"{path} is not valid JSON ({exc})") from None
        if not isinstance(raw, dict):
            raise ConfigError("config", "top level must be a JSON object")
        version = raw.get("version", CONFIG_VERSION)
        if version != CONFIG_VERSION:
            raise VersionError(f"config version {version} is not {CONFIG_VERSION}")
        values.update({k: _coerce(k, v) for k, v in raw.items()})
    values.update(env_overrides(environ))
    values.update({k: _coerce(k, v) for k, v in (overrides or {}).items() if v is not None})
    return replace(RunConfig(), **values).validate()
