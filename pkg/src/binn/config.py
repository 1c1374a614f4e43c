"""INI configuration files with sections mirroring the config dataclasses.

A file may hold any of ``[synth]``, ``[embed]``, ``[binn]`` and ``[ingest]``;
other sections (run records in manifests, for instance) are ignored, so a
manifest written by one run can be fed back as the config of the next.
"""

from __future__ import annotations

import configparser
import dataclasses
import types
import typing
from dataclasses import dataclass
from pathlib import Path

from .datagen import SynthConfig
from .embed import EmbedConfig
from .model import BinnConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class IngestConfig:
    num_behavior_types: int = 4
    min_user_len: int = 10
    min_item_count: int = 5
    train_fraction: float = 0.9


SECTIONS = {"synth": SynthConfig, "embed": EmbedConfig, "binn": BinnConfig, "ingest": IngestConfig}


def _convert(text: str, hint, where: str):
    text = text.strip()
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin in (typing.Union, types.UnionType):
        if text.lower() in ("", "none"):
            return None
        inner = [a for a in args if a is not type(None)]
        return _convert(text, inner[0], where)
    if origin is tuple:
        return tuple(_convert(part, args[0], where) for part in text.replace(",", " ").split())
    try:
        if hint is bool:
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if hint in (int, float, str):
            return hint(text)
    except ValueError:
        raise ConfigError(f"{where}: cannot read {text!r} as {hint.__name__}") from None
    raise ConfigError(f"{where}: unsupported field type {hint}")


def _build(section: str, values: dict[str, str]):
    cls = SECTIONS[section]
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, text in values.items():
        if key not in names:
            raise ConfigError(f"[{section}] has no setting {key!r}; known: {', '.join(sorted(names))}")
        kwargs[key] = _convert(text, hints[key], f"[{section}] {key}")
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}] {exc}") from None


def load_config(path=None, overrides=(), seed: int | None = None) -> dict:
    """Effective configs for every section: defaults, then the file, then overrides.

    ``overrides`` are ``section.key=value`` strings; ``seed`` replaces the
    seed of every section that has one.
    """
    raw: dict[str, dict[str, str]] = {name: {} for name in SECTIONS}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        try:
            cp.read(path, encoding="utf-8")
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}".splitlines()[0]) from None
        for name in SECTIONS:
            if cp.has_section(name):
                raw[name].update(cp[name])
    for item in overrides:
        key, sep, value = item.partition("=")
        section, dot, field = key.strip().partition(".")
        if not sep or not dot or section not in SECTIONS:
            raise ConfigError(f"override {item!r} must look like section.key=value with section in {sorted(SECTIONS)}")
        raw[section][field] = value
    if seed is not None:
        for name, cls in SECTIONS.items():
            if any(f.name == "seed" for f in dataclasses.fields(cls)):
                raw[name]["seed"] = str(seed)
    return {name: _build(name, values) for name, values in raw.items()}


def config_values(cfg) -> dict[str, str]:
    """String form of a config dataclass, the inverse of what :func:`load_config` reads."""
    out = {}
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if v is None:
            out[f.name] = "none"
        elif isinstance(v, tuple):
            out[f.name] = ",".join(str(x) for x in v)
        elif isinstance(v, float):
            out[f.name] = repr(v)
        else:
            out[f.name] = str(v)
    return out


def write_manifest(path, sections: dict[str, dict]) -> None:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    for name, values in sections.items():
        cp[name] = {k: str(v) for k, v in values.items()}
    with open(path, "w", encoding="utf-8") as fh:
        cp.write(fh)


def read_manifest(path) -> dict[str, dict[str, str]]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"manifest not found: {path}")
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp.read(path, encoding="utf-8")
    return {s: dict(cp[s]) for s in cp.sections()}
