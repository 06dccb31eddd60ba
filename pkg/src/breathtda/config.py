"""Flat ``key=value`` run configuration.

Keys mirror :class:`~breathtda.learner.BoostConfig` and
:class:`~breathtda.features.FeatureConfig`, plus ``sqi_threshold``
(``none`` disables the training-set filter).  ``class_weights`` is written
as ``Wake:4,REM:4,NREM:1``.  Blank lines and ``#`` comments are ignored.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .features import STAGES, FeatureConfig
from .learner import BoostConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    boost: BoostConfig = field(default_factory=BoostConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    sqi_threshold: float | None = 0.25

    def digest(self) -> str:
        return hashlib.sha256(format_config(self).encode()).hexdigest()


_BOOST_KEYS = {f.name: f.type for f in fields(BoostConfig)}
_FEATURE_KEYS = {f.name: f.type for f in fields(FeatureConfig)}


def _parse_bool(v: str) -> bool:
    low = v.lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _parse_weights(v: str) -> dict[str, float]:
    out = {}
    for item in v.split(","):
        stage, _, w = item.partition(":")
        if stage.strip() not in STAGES:
            raise ValueError(f"unknown stage {stage.strip()!r}")
        out[stage.strip()] = float(w)
    return out


def _convert(kind: str, v: str):
    kind = str(kind)
    if kind.startswith("dict"):
        return _parse_weights(v)
    if kind == "bool":
        return _parse_bool(v)
    if kind == "int":
        return int(v)
    if kind == "float":
        return float(v)
    return v


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    boost: dict = {}
    feats: dict = {}
    sqi: float | None = 0.25
    for k, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep:
            raise ConfigError(f"{source}:{k}: expected key=value")
        try:
            if key == "sqi_threshold":
                sqi = None if value.lower() == "none" else float(value)
            elif key in _BOOST_KEYS:
                boost[key] = _convert(_BOOST_KEYS[key], value)
            elif key in _FEATURE_KEYS:
                feats[key] = _convert(_FEATURE_KEYS[key], value)
            else:
                raise ConfigError(f"{source}:{k}: unknown key {key!r}")
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"{source}:{k}: {key}: {exc}") from None
    try:
        return RunConfig(BoostConfig(**boost), FeatureConfig(**feats), sqi)
    except ValueError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    path = Path(path)
    return parse_config(path.read_text(), str(path))


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, dict):
        return ",".join(f"{s}:{v[s]!r}" for s in STAGES)
    return repr(v) if isinstance(v, float) else str(v)


def format_config(cfg: RunConfig) -> str:
    """Canonical text form; ``parse_config(format_config(c)) == c``."""
    lines = [f"{f.name}={_fmt(getattr(cfg.boost, f.name))}" for f in fields(BoostConfig)]
    lines += [f"{f.name}={_fmt(getattr(cfg.features, f.name))}" for f in fields(FeatureConfig)]
    lines.append(f"sqi_threshold={'none' if cfg.sqi_threshold is None else repr(cfg.sqi_threshold)}")
    return "\n".join(lines) + "\n"


def with_seed(cfg: RunConfig, seed: int) -> RunConfig:
    return replace(cfg, boost=replace(cfg.boost, seed=seed))
