"""Run configuration: defaults < config file < ``ISOSPEC_*`` env vars < flags.

The config file is flat ``key=value`` lines (``#`` starts a comment); keys
are the :class:`RunConfig` field names, list values are comma-separated.
"""

from __future__ import annotations

import dataclasses
import os
import typing
from dataclasses import dataclass, field, fields
from typing import Mapping

ENV_PREFIX = "ISOSPEC_"

DEFAULT_MEASURES = ("SVG", "COND_HM", "ECOND_HM")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    subcommand: str = ""
    inputs: tuple[str, ...] = ()
    measures: tuple[str, ...] = DEFAULT_MEASURES
    limit: int = 200000
    expect_dim: typing.Optional[int] = None
    normalize: bool = True
    center: bool = True
    svg_top_k: typing.Optional[int] = None
    combiner: str = "hm"
    is_top_n: int = 10000
    is_k: int = 10
    is_mass: float = 0.9
    gh_sample: int = 5000
    alpha: float = 0.01
    format: str = "csv"
    output: typing.Optional[str] = None
    pairs: typing.Optional[str] = None
    perf: typing.Optional[str] = None
    task: typing.Optional[str] = None
    candidates: tuple[str, ...] = ()
    mode: str = "source_selection"
    min_group: int = 3
    plot: typing.Optional[str] = None
    plot_measure: typing.Optional[str] = None
    workers: int = field(default_factory=lambda: os.cpu_count() or 1)
    cache: bool = True
    cache_dir: typing.Optional[str] = None
    seed: int = 0

    def validate(self) -> None:
        """Check parameter ranges; called before any input file is read."""

        def need(cond: bool, msg: str) -> None:
            if not cond:
                raise ConfigError(msg)

        need(self.limit >= 1, f"limit must be >= 1, got {self.limit}")
        need(self.expect_dim is None or self.expect_dim >= 1, f"expect_dim must be >= 1, got {self.expect_dim}")
        need(self.svg_top_k is None or self.svg_top_k >= 1, f"svg_top_k must be >= 1, got {self.svg_top_k}")
        need(self.combiner in ("hm", "min", "max", "mean"), f"combiner must be hm, min, max or mean, got {self.combiner!r}")
        need(self.is_top_n >= 2, f"is_top_n must be >= 2, got {self.is_top_n}")
        need(self.is_k >= 1, f"is_k must be >= 1, got {self.is_k}")
        need(0 < self.is_mass <= 1, f"is_mass must be in (0, 1], got {self.is_mass}")
        need(self.gh_sample >= 2, f"gh_sample must be >= 2, got {self.gh_sample}")
        need(0 < self.alpha <= 1, f"alpha must be in (0, 1], got {self.alpha}")
        need(self.format in ("csv", "json", "text"), f"format must be csv, json or text, got {self.format!r}")
        need(self.mode in ("source_selection", "target_selection"), f"unknown selection mode {self.mode!r}")
        need(self.min_group >= 3, f"min_group must be >= 3, got {self.min_group}")
        need(self.workers >= 1, f"workers must be >= 1, got {self.workers}")

    # -- file form --

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if value is None:
                continue
            lines.append(f"{f.name}={_render(value)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> RunConfig:
        return cls().updated(parse_config_text(text))

    def updated(self, values: Mapping[str, object]) -> RunConfig:
        """Copy with ``values`` applied; strings are coerced to the field types."""
        hints = typing.get_type_hints(type(self))
        known = {f.name for f in fields(self)}
        changes = {}
        for key, raw in values.items():
            if key not in known:
                raise ConfigError(f"unknown configuration key {key!r}")
            changes[key] = _coerce(key, raw, hints[key]) if isinstance(raw, str) else raw
        return dataclasses.replace(self, **changes)


def _render(value: object) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _coerce(key: str, raw: str, hint) -> object:
    raw = raw.strip()
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin is typing.Union and type(None) in args:
        if raw.lower() in ("", "none", "null"):
            return None
        hint = next(a for a in args if a is not type(None))
        origin = typing.get_origin(hint)
    try:
        if origin is tuple:
            return tuple(p.strip() for p in raw.split(",") if p.strip())
        if hint is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if hint is int:
            return int(raw)
        if hint is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"invalid value for {key}: {raw!r}") from None


def parse_config_text(text: str) -> dict[str, str]:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def env_overrides(environ: Mapping[str, str] | None = None) -> dict[str, str]:
    environ = os.environ if environ is None else environ
    known = {f.name for f in fields(RunConfig)}
    out = {}
    for key, value in environ.items():
        if key.startswith(ENV_PREFIX):
            name = key[len(ENV_PREFIX):].lower()
            if name in known:
                out[name] = value
    return out
