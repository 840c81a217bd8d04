"""Config file parsing: flat key=value text, JSON accepted as an alternate.

Keys are the TrainConfig field names plus short aliases matching how the
hyperparameters are usually written (G, n, tau, lr, steps,
max_response_length).  Unknown keys are rejected by name; missing keys
take the TrainConfig defaults, so an empty file is a valid config.
"""

from __future__ import annotations

import json
from dataclasses import fields

from .trainer import TrainConfig

ALIASES = {
    "G": "group_size",
    "n": "n_per_segment",
    "tau": "percentile_p",
    "p": "percentile_p",
    "lr": "learning_rate",
    "steps": "total_steps",
    "max_response_length": "max_response_len",
}

_FIELD_TYPES = {
    f.name: f.type if isinstance(f.type, str) else f.type.__name__
    for f in fields(TrainConfig)
}

_TRUE_WORDS = {"true", "1", "yes", "on"}
_FALSE_WORDS = {"false", "0", "no", "off"}


def _canonical_key(key: str) -> str:
    name = ALIASES.get(key, key)
    if name not in _FIELD_TYPES:
        raise ValueError(f"config: unknown key {key!r}")
    return name


def _coerce(name: str, raw: str):
    kind = _FIELD_TYPES[name]
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            word = raw.strip().lower()
            if word in _TRUE_WORDS:
                return True
            if word in _FALSE_WORDS:
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        return raw
    except ValueError as exc:
        raise ValueError(f"config: key {name!r}: {exc}") from exc


def _parse_text(text: str, source: str) -> dict:
    out: dict = {}
    for line_no, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(
                f"config: {source}:{line_no}: expected key=value, got {line!r}"
            )
        key, _, raw = line.partition("=")
        name = _canonical_key(key.strip())
        if name in out:
            raise ValueError(f"config: {source}:{line_no}: duplicate key {name!r}")
        out[name] = _coerce(name, raw.strip())
    return out


def _parse_json(text: str, source: str) -> dict:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"config: {source}: bad JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ValueError(f"config: {source}: JSON config must be an object")
    out: dict = {}
    for key, value in data.items():
        name = _canonical_key(key)
        if name in out:
            raise ValueError(f"config: {source}: duplicate key {name!r}")
        out[name] = _coerce(name, value) if isinstance(value, str) else value
    return out


def config_from_text(text: str, source: str = "<config>") -> TrainConfig:
    """Parse config text; a leading '{' selects the JSON form."""
    if text.lstrip().startswith("{"):
        data = _parse_json(text, source)
    else:
        data = _parse_text(text, source)
    try:
        return TrainConfig.from_dict({**TrainConfig().to_dict(), **data})
    except (TypeError, ValueError) as exc:
        raise ValueError(f"config: {source}: {exc}") from exc


def apply_overrides(config: TrainConfig, pairs) -> TrainConfig:
    """New config with key=value overrides applied (aliases accepted)."""
    data = config.to_dict()
    for pair in pairs:
        if "=" not in pair:
            raise ValueError(f"config: expected key=value override, got {pair!r}")
        key, _, raw = pair.partition("=")
        name = _canonical_key(key.strip())
        data[name] = _coerce(name, raw.strip())
    return TrainConfig.from_dict(data)


def load_config(path) -> TrainConfig:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    return config_from_text(text, source=str(path))


def save_config(config: TrainConfig, path) -> None:
    """Write key=value lines that load_config parses back identically."""
    with open(path, "w", encoding="utf-8") as fh:
        for name, value in config.to_dict().items():
            # str(float) is repr in py3, so numeric values survive exactly
            fh.write(f"{name}={value}\n")
