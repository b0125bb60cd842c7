"""Flat ``key = value`` configuration files and the override chain.

Resolution order, lowest to highest: dataclass defaults, preset, the
``STDGN_SEED`` environment variable, config file, command-line flags.
"""

from __future__ import annotations

import os
from dataclasses import fields
from pathlib import Path
from typing import Dict, Iterable, Mapping, Optional, Union

from stdgn.training import TrainConfig

SEED_ENV = "STDGN_SEED"

PRESETS: Dict[str, Dict[str, object]] = {
    "default": {},
    # Narrow networks that keep a full run within CPU minutes.
    "desk": {
        "base_width": 8,
        "se_reduction": 4,
        "disc_width": 8,
        "srn_width": 8,
        "alternation": "interleave",
        "total_iterations": 1000,
        "baseline_iterations": 1500,
        "srn_epochs": 4,
        "val_every": 250,
    },
}


class ConfigError(ValueError):
    """Malformed config text or an unknown key."""


def train_keys() -> Dict[str, str]:
    return {f.name: f.type if isinstance(f.type, str) else f.type.__name__ for f in fields(TrainConfig)}


def parse_config_text(text: str, source: str = "<config>") -> Dict[str, str]:
    """Parse ``key = value`` lines. ``#`` starts a comment; blank lines are skipped."""
    values: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        values[key] = value
    return values


def read_config_file(path: Union[str, Path]) -> Dict[str, str]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from exc
    return parse_config_text(text, str(path))


def resolve(
    file_values: Optional[Mapping[str, str]] = None,
    flag_values: Optional[Mapping[str, object]] = None,
    preset: str = "default",
    extra_keys: Iterable[str] = (),
    env: Optional[Mapping[str, str]] = None,
):
    """Merge the chain and split it into a TrainConfig and the remaining command keys.

    ``extra_keys`` are command-level options (paths, split names) that may
    also appear in a config file. Any other unknown key is a ConfigError.
    Returns ``(TrainConfig, extras)``.
    """
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    env = os.environ if env is None else env
    known = train_keys()
    extra_keys = set(extra_keys)
    merged: Dict[str, object] = dict(PRESETS[preset])
    if env.get(SEED_ENV):
        merged["seed"] = env[SEED_ENV]
    for layer in (file_values or {}, {k: v for k, v in (flag_values or {}).items() if v is not None}):
        for key, value in layer.items():
            if key not in known and key not in extra_keys:
                raise ConfigError(f"unknown config key {key!r}")
            merged[key] = value
    train_values = {k: v for k, v in merged.items() if k in known}
    extras = {k: v for k, v in merged.items() if k not in known}
    try:
        config = TrainConfig.from_dict(train_values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return config, extras


def format_value(value: object) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def format_config(values: Mapping[str, object], header: str = "") -> str:
    lines = [f"# {line}" for line in header.splitlines()] if header else []
    lines += [f"{key} = {format_value(value)}" for key, value in values.items() if value is not None]
    return "\n".join(lines) + "\n"


def write_resolved(
    path: Union[str, Path], command: str, config: Optional[TrainConfig], extras: Mapping[str, object]
) -> Path:
    """Echo everything a command ran with, in a form ``--config`` accepts back."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    values: Dict[str, object] = dict(extras)
    if config is not None:
        values.update(config.to_dict())
    path.write_text(format_config(values, header=f"resolved configuration for: stdgn {command}"))
    return path
