"""INI-style key/value documents for configs and manifests.

Values are written with ``repr`` for floats so every number round-trips
exactly. Unknown keys are rejected when reading.
"""
from __future__ import annotations

import configparser
import dataclasses
import enum
import io
from typing import Any, Mapping

from .errors import ConfigError


def format_value(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, enum.Enum):
        return v.name
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, complex):
        return f"{v.real!r},{v.imag!r}"
    if isinstance(v, (tuple, list)):
        return ",".join(format_value(x) for x in v)
    return str(v)


def _parse_like(raw: str, default: Any, key: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, enum.Enum):
            return type(default)[raw.upper()]
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            if not raw:
                return ()
            if default:
                return tuple(_parse_like(x, default[0], key) for x in raw.split(","))
            return tuple(_parse_like(x, None, key) for x in raw.split(","))
        if default is None:
            if raw.lower() in ("", "none"):
                return None
            try:
                return float(raw)
            except ValueError:
                return raw
        return raw
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"cannot parse {key}={raw!r}: {exc}") from None


def dataclass_items(obj) -> dict[str, str]:
    out = {}
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        if dataclasses.is_dataclass(v):
            continue
        out[f.name] = format_value(v)
    return out


def dataclass_from_items(cls, items: Mapping[str, str], base=None, section: str = ""):
    """Build ``cls`` from string items, starting from ``base`` (or defaults)."""
    base = base if base is not None else cls()
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, raw in items.items():
        if key not in names:
            raise ConfigError(f"unknown key {key!r} in section [{section or cls.__name__}]")
        kwargs[key] = _parse_like(raw, getattr(base, key), f"{section}.{key}")
    try:
        return dataclasses.replace(base, **kwargs)
    except Exception as exc:  # validation in __post_init__
        raise ConfigError(f"invalid [{section or cls.__name__}]: {exc}") from exc


def new_parser() -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",))
    cp.optionxform = str  # keep key case
    return cp


def parse_text(text: str) -> configparser.ConfigParser:
    cp = new_parser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    return cp


def dump(cp: configparser.ConfigParser) -> str:
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()
