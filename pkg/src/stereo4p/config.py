"""Plain-text key/value config files.

Format: one ``key = value`` pair per line, ``#`` starts a comment, blank lines
ignored. Values are kept as strings; callers coerce with the typed getters.
"""

from __future__ import annotations

import os

from .errors import ConfigError


def parse_kv_text(text: str, source: str = "<string>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        out[key] = value.strip()
    return out


def read_kv_file(path: str | os.PathLike) -> dict[str, str]:
    path = os.fspath(path)
    with open(path, "r", encoding="utf-8") as f:
        return parse_kv_text(f.read(), source=path)


def format_kv(pairs: dict[str, object]) -> str:
    return "\n".join(f"{k} = {v}" for k, v in pairs.items()) + "\n"


def write_kv_file(path: str | os.PathLike, pairs: dict[str, object]) -> None:
    from .util import atomic_write_text

    atomic_write_text(path, format_kv(pairs))


def get_int(cfg: dict[str, str], key: str, default: int | None = None) -> int:
    if key not in cfg:
        if default is None:
            raise ConfigError(f"missing required key {key!r}")
        return default
    try:
        return int(cfg[key])
    except ValueError as exc:
        raise ConfigError(f"key {key!r}: expected integer, got {cfg[key]!r}") from exc


def get_float(cfg: dict[str, str], key: str, default: float | None = None) -> float:
    if key not in cfg:
        if default is None:
            raise ConfigError(f"missing required key {key!r}")
        return default
    try:
        return float(cfg[key])
    except ValueError as exc:
        raise ConfigError(f"key {key!r}: expected number, got {cfg[key]!r}") from exc


def get_bool(cfg: dict[str, str], key: str, default: bool | None = None) -> bool:
    if key not in cfg:
        if default is None:
            raise ConfigError(f"missing required key {key!r}")
        return default
    value = cfg[key].lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"key {key!r}: expected boolean, got {cfg[key]!r}")


def get_int_list(cfg: dict[str, str], key: str, default: list[int] | None = None) -> list[int]:
    """Parse a comma-separated integer list; 'none' or '' means an empty list."""
    if key not in cfg:
        if default is None:
            raise ConfigError(f"missing required key {key!r}")
        return list(default)
    raw = cfg[key].strip().lower()
    if raw in ("", "none"):
        return []
    try:
        return [int(part.strip()) for part in cfg[key].split(",")]
    except ValueError as exc:
        raise ConfigError(f"key {key!r}: expected integer list, got {cfg[key]!r}") from exc
