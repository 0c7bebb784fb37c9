"""Key-value config text.

One ``key = value`` pair per line; ``#`` starts a comment.  Lists are
comma-separated.  Lists of points separate points with ``;`` and
coordinates with ``,``.  Floats are written with ``repr`` so that they
round-trip exactly.
"""

from __future__ import annotations

from pathlib import Path

from .errors import ConfigError


def parse_kv(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def dump_kv(items: dict[str, str]) -> str:
    return "".join(f"{k} = {v}\n" for k, v in items.items())


def read_kv(path: str | Path) -> dict[str, str]:
    return parse_kv(Path(path).read_text())


def fmt_float(x: float) -> str:
    return repr(float(x))


def fmt_floats(xs) -> str:
    return ", ".join(fmt_float(x) for x in xs)


def fmt_points(points) -> str:
    return "; ".join(fmt_floats(p) for p in points)


def parse_float(s: str, key: str = "value") -> float:
    try:
        return float(s)
    except ValueError:
        raise ConfigError(f"{key}: not a number: {s!r}") from None


def parse_int(s: str, key: str = "value") -> int:
    try:
        return int(s)
    except ValueError:
        raise ConfigError(f"{key}: not an integer: {s!r}") from None


def parse_floats(s: str, key: str = "value") -> tuple[float, ...]:
    parts = [p.strip() for p in s.split(",") if p.strip()]
    if not parts:
        raise ConfigError(f"{key}: empty list")
    return tuple(parse_float(p, key) for p in parts)


def parse_points(s: str, key: str = "value") -> tuple[tuple[float, ...], ...]:
    pts = [p for p in s.split(";") if p.strip()]
    if not pts:
        raise ConfigError(f"{key}: empty point list")
    return tuple(parse_floats(p, key) for p in pts)


def parse_geometric_grid(s: str, key: str = "sigma") -> tuple[float, float, int]:
    """Parse ``min:max:count``."""
    parts = s.split(":")
    if len(parts) != 3:
        raise ConfigError(f"{key}: expected min:max:count, got {s!r}")
    lo, hi = parse_float(parts[0], key), parse_float(parts[1], key)
    count = parse_int(parts[2], key)
    return lo, hi, count


def require(items: dict[str, str], key: str) -> str:
    try:
        return items[key]
    except KeyError:
        raise ConfigError(f"missing required key {key!r}") from None
