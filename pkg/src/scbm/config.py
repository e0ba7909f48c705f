"""Flat key = value configuration files with strict schemas.

Format: optional ``[section]`` headers, one ``key = value`` per line, ``#``
comments, UTF-8.  Unknown keys are hard errors naming the offender; every
subcommand validates its section against a declared schema with typed
casters and defaults.
"""

from __future__ import annotations

from pathlib import Path

__all__ = ["ConfigError", "parse_config", "apply_schema"]


class ConfigError(Exception):
    """Invalid configuration: unknown key, bad value, malformed line."""


def parse_config(text: str) -> dict[str, dict[str, str]]:
    """Parse sectioned key = value text into nested string dicts."""
    sections: dict[str, dict[str, str]] = {}
    current = ""
    sections[current] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            sections.setdefault(current, {})
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in sections[current]:
            raise ConfigError(f"line {lineno}: duplicate key {key!r} in section [{current}]")
        sections[current][key] = value.strip()
    return sections


def load_config(path: str | Path) -> dict[str, dict[str, str]]:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def _cast_bool(raw: str) -> bool:
    low = raw.lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _cast_floats(raw: str) -> tuple[float, ...]:
    return tuple(float(part.strip()) for part in raw.split(",") if part.strip())


CASTERS = {
    "float": float,
    "int": int,
    "bool": _cast_bool,
    "str": str,
    "floats": _cast_floats,
}


def apply_schema(section_name: str, raw: dict[str, str], schema: dict[str, tuple[str, object]]) -> dict[str, object]:
    """Validate one section against ``schema`` (key -> (type name, default)).

    Unknown keys raise with the key named; missing keys take the default.
    """
    out = {key: default for key, (_, default) in schema.items()}
    for key, raw_value in raw.items():
        if key not in schema:
            raise ConfigError(f"unknown config key {key!r} in section [{section_name}]")
        type_name, _ = schema[key]
        try:
            out[key] = CASTERS[type_name](raw_value)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad value for {key!r} in section [{section_name}]: {exc}") from exc
    return out
