"""``key = value`` run configuration files with dotted namespaces.

Example::

    # comments start with '#'
    unet.depth = 3
    extractor.mode = absolute
    loss.use_focal = false
    train.epochs = 10

Namespaces are ``grid``, ``extractor``, ``unet``, ``loss`` and ``train``.
Unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .errors import ConfigError
from .extractor import ExtractorConfig
from .losses import LossConfig
from .projection import GridConfig
from .trainer import TrainConfig
from .unet import UNetConfig

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _convert(raw: str, default, key: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            kind = type(default[0]) if default else float
            return tuple(kind(v) for v in raw.replace(" ", "").split(",") if v)
        if default is None:
            if raw.lower() in ("none", ""):
                return None
            if "," in raw:
                return tuple(float(v) for v in raw.split(","))
            try:
                return int(raw)
            except ValueError:
                return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def parse_dataclass_items(cls, items: Mapping[str, str], prefix: str, strict: bool = False):
    """Instantiate ``cls`` from the ``prefix.*`` entries of ``items``."""
    defaults = cls()
    known = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, raw in items.items():
        ns, _, name = key.partition(".")
        if ns != prefix:
            continue
        if name not in known:
            if strict:
                raise ConfigError(f"unknown configuration key {key!r}")
            continue
        kwargs[name] = _convert(raw, getattr(defaults, name), key)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {prefix} configuration: {exc}") from None


SECTIONS = {
    "grid": GridConfig,
    "extractor": ExtractorConfig,
    "unet": UNetConfig,
    "loss": LossConfig,
    "train": TrainConfig,
}


@dataclass
class RunConfig:
    grid: GridConfig = field(default_factory=GridConfig)
    extractor: ExtractorConfig = field(default_factory=ExtractorConfig)
    unet: UNetConfig = field(default_factory=UNetConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    @classmethod
    def from_items(cls, items: Mapping[str, str]) -> "RunConfig":
        for key in items:
            ns, _, name = key.partition(".")
            if ns not in SECTIONS or name not in {f.name for f in dataclasses.fields(SECTIONS[ns])}:
                raise ConfigError(f"unknown configuration key {key!r}")
        sections = {ns: parse_dataclass_items(kind, items, ns, strict=True) for ns, kind in SECTIONS.items()}
        sections["grid"] = _keep_field_of_view(sections["grid"], items)
        return cls(**sections)


def _keep_field_of_view(grid: GridConfig, items: Mapping[str, str]) -> GridConfig:
    """Rescale angular steps when only the pixel counts were given.

    ``grid.W = 128`` then means the default field of view at a coarser
    resolution rather than a narrower view.
    """
    default = GridConfig()
    changes = {}
    if "grid.W" in items and "grid.delta_theta" not in items:
        changes["delta_theta"] = default.W * default.delta_theta / grid.W
    if "grid.H" in items and "grid.delta_phi" not in items:
        changes["delta_phi"] = default.H * default.delta_phi / grid.H
    return dataclasses.replace(grid, **changes) if changes else grid


def parse_lines(lines: Iterable[str], source: str = "<config>") -> dict[str, str]:
    items: dict[str, str] = {}
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        items[key.strip()] = value.strip()
    return items


def load_run_config(path=None, overrides: Iterable[str] = ()) -> RunConfig:
    """Read a config file (optional) and apply ``key=value`` overrides on top."""
    items: dict[str, str] = {}
    if path is not None:
        items.update(parse_lines(Path(path).read_text().splitlines(), str(path)))
    items.update(parse_lines(overrides, "<command line>"))
    return RunConfig.from_items(items)
