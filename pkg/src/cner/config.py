"""Run configuration: plain-text files merged with command-line overrides.

Config files are UTF-8 ``key = value`` lines; a line whose first non-blank
character is ``#`` is a comment.  Values are everything right of the first
``=``, stripped.  Overrides from the command line win over the file, which
wins over defaults.  Unknown keys are rejected so typos fail loudly, and
every run can echo its fully resolved configuration.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence


class ConfigError(Exception):
    """Usage or configuration mistake; maps to exit code 2."""


REQUIRED = "__required__"


@dataclass(frozen=True)
class Option:
    """One recognized key: name, type kind (str|int|float|bool), default.

    A default of REQUIRED makes the key mandatory; None means "absent
    unless given" (resolved value None).
    """

    name: str
    kind: str
    default: object = None
    help: str = ""

    def __post_init__(self):
        if self.kind not in ("str", "int", "float", "bool"):
            raise ValueError(f"bad option kind {self.kind!r}")


def parse_config_file(path: str) -> dict[str, str]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from None
    except UnicodeDecodeError as e:
        raise ConfigError(f"config file {path} is not UTF-8: {e}") from None
    values: dict[str, str] = {}
    for lineno, line in enumerate(text.split("\n"), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(
                f"{path}:{lineno}: expected 'key = value', got {line.strip()!r}"
            )
        key = key.strip()
        if not key:
            raise ConfigError(f"{path}:{lineno}: empty key")
        if key in values:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        values[key] = value.strip()
    return values


def parse_override_args(args: Sequence[str]) -> dict[str, str]:
    """Turn trailing ``--key value`` pairs into a mapping.

    Hyphens in key names normalize to underscores so ``--max-epochs`` and
    ``--max_epochs`` are the same key.
    """
    values: dict[str, str] = {}
    i = 0
    while i < len(args):
        arg = args[i]
        if not arg.startswith("--") or len(arg) <= 2:
            raise ConfigError(f"expected --key, got {arg!r}")
        key = arg[2:].replace("-", "_")
        if i + 1 >= len(args):
            raise ConfigError(f"missing value for --{arg[2:]}")
        if key in values:
            raise ConfigError(f"duplicate override --{arg[2:]}")
        values[key] = args[i + 1]
        i += 2
    return values


def _coerce(option: Option, raw: str):
    if option.kind == "str":
        return raw
    if option.kind == "int":
        try:
            return int(raw, 10)
        except ValueError:
            raise ConfigError(
                f"key {option.name!r} needs an integer, got {raw!r}"
            ) from None
    if option.kind == "float":
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(
                f"key {option.name!r} needs a number, got {raw!r}"
            ) from None
    lowered = raw.lower()
    if lowered in ("true", "yes", "1"):
        return True
    if lowered in ("false", "no", "0"):
        return False
    raise ConfigError(f"key {option.name!r} needs true/false, got {raw!r}")


def resolve(options: Sequence[Option], file_values: Mapping[str, str],
            overrides: Mapping[str, str]) -> dict:
    """Merge defaults, file values, and overrides into typed values."""
    by_name = {o.name: o for o in options}
    for source, values in (("config file", file_values),
                           ("command line", overrides)):
        unknown = sorted(set(values) - set(by_name))
        if unknown:
            raise ConfigError(
                f"unknown key(s) in {source}: {', '.join(unknown)}; "
                f"valid keys: {', '.join(sorted(by_name))}"
            )
    resolved: dict = {}
    for option in options:
        if option.name in overrides:
            resolved[option.name] = _coerce(option, overrides[option.name])
        elif option.name in file_values:
            resolved[option.name] = _coerce(option, file_values[option.name])
        elif option.default is REQUIRED:
            raise ConfigError(f"missing required key {option.name!r}")
        else:
            resolved[option.name] = option.default
    return resolved


def render_config(resolved: Mapping[str, object]) -> list[str]:
    """``config key=value`` lines, sorted by key, for run logs."""
    lines = []
    for key in sorted(resolved):
        value = resolved[key]
        if value is None:
            continue
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"config {key}={value}")
    return lines
