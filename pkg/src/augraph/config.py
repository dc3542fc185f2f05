"""Flat key=value configuration files.

Both the training and the synthetic-benchmark configs use the same plain
text grammar: one ``key=value`` pair per line, ``#`` starts a comment,
blank lines ignored. Values are strings; callers coerce them with the
helpers below. Lists are comma separated, pairs use ``x`` (``56x64``).
"""

from __future__ import annotations

from pathlib import Path

from augraph.errors import ConfigError


def parse_kv_file(path: str | Path) -> dict[str, str]:
    """Read a key=value file into an ordered dict of raw strings."""
    out: dict[str, str] = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"{path}:{lineno}: empty key")
        out[key] = value.strip()
    return out


def write_kv_file(path: str | Path, pairs: dict[str, object]) -> None:
    lines = [f"{k}={_format_value(v)}" for k, v in pairs.items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _format_value(value: object) -> str:
    if isinstance(value, (list, tuple)):
        return ",".join(_format_value(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def as_bool(raw: str, key: str = "") -> bool:
    lowered = raw.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"cannot parse boolean {key or 'value'}: {raw!r}")


def as_int(raw: str, key: str = "") -> int:
    try:
        return int(raw)
    except ValueError as exc:
        raise ConfigError(f"cannot parse integer {key or 'value'}: {raw!r}") from exc


def as_float(raw: str, key: str = "") -> float:
    try:
        return float(raw)
    except ValueError as exc:
        raise ConfigError(f"cannot parse float {key or 'value'}: {raw!r}") from exc


def as_int_list(raw: str, key: str = "") -> list[int]:
    if not raw.strip():
        return []
    return [as_int(part, key) for part in raw.split(",")]


def as_float_list(raw: str, key: str = "") -> list[float]:
    if not raw.strip():
        return []
    return [as_float(part, key) for part in raw.split(",")]


def as_pair_list(raw: str, key: str = "") -> list[tuple[float, float]]:
    """Parse ``WxH`` pairs, e.g. ``56x64,36x36``."""
    pairs = []
    for part in raw.split(","):
        if "x" not in part:
            raise ConfigError(f"cannot parse size pair in {key or 'value'}: {part!r}")
        w, h = part.split("x", 1)
        pairs.append((as_float(w, key), as_float(h, key)))
    return pairs
