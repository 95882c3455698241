"""Key=value config files with line-accurate error reporting.

One "key = value" per line; blank lines and '#' comments are ignored.
Consumers declare which keys (or dotted key patterns) they accept; anything
else is rejected with the offending line number.
"""

from __future__ import annotations

from pathlib import Path

from .errors import ConfigError


class Config:
    def __init__(self, values: dict[str, str], lines: dict[str, int], source: str):
        self.values = values
        self.lines = lines
        self.source = source

    def get(self, key: str, default=None) -> str | None:
        return self.values.get(key, default)

    def require(self, key: str) -> str:
        if key not in self.values:
            raise ConfigError(f"{self.source}: missing required key {key!r}")
        return self.values[key]

    def get_int(self, key: str, default=None):
        return self._typed(key, default, int, "an integer")

    def get_float(self, key: str, default=None):
        return self._typed(key, default, float, "a number")

    def get_floats(self, key: str, default=None):
        raw = self.values.get(key)
        if raw is None:
            return default
        try:
            return [float(tok) for tok in raw.split(",") if tok.strip()]
        except ValueError:
            raise ConfigError(
                f"{self.source}:{self.lines[key]}: {key} must be a comma list of numbers")

    def get_strs(self, key: str, default=None):
        raw = self.values.get(key)
        if raw is None:
            return default
        return [tok.strip() for tok in raw.split(",") if tok.strip()]

    def _typed(self, key, default, cast, what):
        raw = self.values.get(key)
        if raw is None:
            return default
        try:
            return cast(raw)
        except ValueError:
            raise ConfigError(
                f"{self.source}:{self.lines[key]}: {key} must be {what}, got {raw!r}")

    def check_keys(self, allowed: set[str], prefixes: tuple[str, ...] = ()) -> None:
        for key in self.values:
            if key in allowed or any(key.startswith(p) for p in prefixes):
                continue
            raise ConfigError(
                f"{self.source}:{self.lines[key]}: unknown key {key!r}")

    def subkeys(self, prefix: str) -> dict[str, dict[str, str]]:
        """Group 'prefix.<name>.<field>' entries by name."""
        out: dict[str, dict[str, str]] = {}
        for key, value in self.values.items():
            if not key.startswith(prefix + "."):
                continue
            rest = key[len(prefix) + 1:]
            name, _, fieldname = rest.partition(".")
            if not name or not fieldname:
                raise ConfigError(
                    f"{self.source}:{self.lines[key]}: malformed key {key!r}, "
                    f"expected {prefix}.<name>.<field>")
            out.setdefault(name, {})[fieldname] = value
        return out


def parse_config(path) -> Config:
    values: dict[str, str] = {}
    lines: dict[str, int] = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not key:
            raise ConfigError(f"{path}:{lineno}: empty key")
        if key in values:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r} "
                              f"(first set on line {lines[key]})")
        values[key] = value
        lines[key] = lineno
    return Config(values, lines, str(path))
