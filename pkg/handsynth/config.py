"""Command-line configuration resolution.

Each option may come from a flag, an environment variable ``HANDSYNTH_<NAME>``,
a dotenv config file (``--config`` or ``HANDSYNTH_CONFIG``) using the same keys,
or its default, in that order of precedence.
"""

from __future__ import annotations

import argparse
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping

from dotenv import dotenv_values

ENV_PREFIX = "HANDSYNTH_"
CONFIG_KEY = f"{ENV_PREFIX}CONFIG"
TRUE_VALUES = {"1", "true", "yes"}
FALSE_VALUES = {"0", "false", "no", ""}
U64_MAX = (1 << 64) - 1


class UsageError(ValueError):
    """A flag, environment variable or config-file value is invalid."""


# ---------------------------------------------------------------------------
# Value parsers; argparse reports their ValueError as a usage error
# ---------------------------------------------------------------------------


def non_negative_int(raw: str) -> int:
    value = int(raw, 10)
    if value < 0:
        raise ValueError(f"{raw!r} is negative")
    return value


def positive_int(raw: str) -> int:
    value = int(raw, 10)
    if value < 1:
        raise ValueError(f"{raw!r} is not a positive integer")
    return value


def seed_value(raw: str) -> int:
    value = int(raw, 10)
    if not 0 <= value <= U64_MAX:
        raise ValueError(f"{raw!r} is outside the unsigned 64-bit range")
    return value


def positive_float(raw: str) -> float:
    value = float(raw)
    if not value > 0 or value == float("inf"):
        raise ValueError(f"{raw!r} is not a positive finite number")
    return value


def boolean(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in TRUE_VALUES:
        return True
    if lowered in FALSE_VALUES:
        return False
    raise ValueError(f"{raw!r} is not a boolean (use 1/true/yes or 0/false/no)")


def path_value(raw: str) -> Path:
    if not raw.strip():
        raise ValueError("empty path")
    return Path(raw)


def choice(*allowed: str) -> Callable[[str], str]:
    def parse(raw: str) -> str:
        if raw not in allowed:
            raise ValueError(f"{raw!r} is not one of {', '.join(allowed)}")
        return raw

    parse.__name__ = "choice"
    return parse


@dataclass(frozen=True)
class Option:
    """One configurable value of a subcommand."""

    name: str
    parse: Callable[[str], Any]
    help: str
    default: Any = None
    required: bool = False

    @property
    def flag(self) -> str:
        return "--" + self.name.replace("_", "-")

    @property
    def env_key(self) -> str:
        return ENV_PREFIX + self.name.upper()

    def add_to(self, parser: argparse.ArgumentParser) -> None:
        default = "required" if self.required else f"default: {self.default}"
        parser.add_argument(
            self.flag,
            dest=self.name,
            type=self.parse,
            default=None,
            metavar=self.name.upper(),
            help=f"{self.help} ({default}; env {self.env_key})",
        )


@dataclass
class CliConfig:
    """Resolved values of one subcommand run and where each came from."""

    command: str
    values: dict[str, Any] = field(default_factory=dict)
    sources: dict[str, str] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Any:
        return self.values[name]

    def log(self) -> None:
        fields = " ".join(
            f"{name}={value}({self.sources[name]})" for name, value in self.values.items()
        )
        logging.info("Resolved config command=%s %s", self.command, fields)


def load_config_file(path: Path | None) -> dict[str, str]:
    if path is None:
        return {}
    if not path.is_file():
        raise UsageError(f"config file {path} not found")
    return {key: value or "" for key, value in dotenv_values(path).items()}


def _parse(option: Option, raw: str, origin: str) -> Any:
    try:
        return option.parse(raw)
    except ValueError as exc:
        raise UsageError(f"{origin} {option.env_key}={raw!r}: {exc}") from None


def resolve(
    command: str,
    options: list[Option],
    args: argparse.Namespace,
    environ: Mapping[str, str] | None = None,
) -> CliConfig:
    """Apply flag > environment > config file > default precedence."""

    environ = os.environ if environ is None else environ
    config_path = getattr(args, "config", None)
    if config_path is None and environ.get(CONFIG_KEY):
        config_path = _parse(Option("config", path_value, ""), environ[CONFIG_KEY], "environment")
    file_values = load_config_file(config_path)

    config = CliConfig(command)
    for option in options:
        flag_value = getattr(args, option.name, None)
        if flag_value is not None:
            value, source = flag_value, "flag"
        elif option.env_key in environ:
            value, source = _parse(option, environ[option.env_key], "environment"), "env"
        elif option.env_key in file_values:
            value, source = _parse(option, file_values[option.env_key], str(config_path)), "file"
        elif option.required:
            raise UsageError(f"{option.flag} is required (or set {option.env_key})")
        else:
            value, source = option.default, "default"
        config.values[option.name] = value
        config.sources[option.name] = source
    return config
