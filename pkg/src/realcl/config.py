"""Run configuration: one YAML file for the world, training, loss and fusion."""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields, replace

import yaml

from .errors import ConfigError
from .losses import LossConfig
from .pairing import AugmentConfig
from .synth import WorldConfig
from .trainer import TrainConfig

SEED_ENV = "REALCL_SEED"

TRAIN_KEYS = ("strategy", "stage1_epochs", "stage2_epochs", "batch_size", "lr", "momentum",
              "encoder_hidden", "projector_hidden", "seed")
FUSION_KEYS = ("fusion_mode", "k", "u", "s", "M", "M_mix", "positive_budget", "linear_hard",
               "linear_neighbors", "smooth_neighbors", "rescore_global")


@dataclass(frozen=True)
class OutputConfig:
    manifest: str = ""
    test_manifest: str = ""
    checkpoint: str = ""
    results: str = ""


@dataclass(frozen=True)
class RunConfig:
    world: WorldConfig = field(default_factory=WorldConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def to_dict(self) -> dict:
        t = self.train
        return {
            "world": {f.name: _plain(getattr(self.world, f.name)) for f in fields(WorldConfig)},
            "train": {k: _plain(getattr(t, k)) for k in TRAIN_KEYS},
            "augment": {f.name: _plain(getattr(t.augment, f.name)) for f in fields(AugmentConfig)},
            "loss": {f.name: _plain(getattr(t.loss, f.name)) for f in fields(LossConfig)},
            "fusion": {k: _plain(getattr(t, k)) for k in FUSION_KEYS},
            "output": {f.name: getattr(self.output, f.name) for f in fields(OutputConfig)},
        }

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def validate(self):
        self.world.validate()
        self.train.validate()
        return self


def _plain(value):
    return list(value) if isinstance(value, tuple) else value


def _coerce(value, default, path):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"expected true/false, got {value!r}", path)
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"expected an integer, got {value!r}", path)
        return value
    if isinstance(default, float):
        if isinstance(value, str):
            # YAML 1.1 reads exponent forms like 1e-3 as strings
            try:
                return float(value)
            except ValueError:
                raise ConfigError(f"expected a number, got {value!r}", path) from None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"expected a number, got {value!r}", path)
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"expected a string, got {value!r}", path)
        return value
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)) or not value:
            raise ConfigError(f"expected a non-empty list, got {value!r}", path)
        return tuple(_coerce(v, default[0], f"{path}[{i}]") for i, v in enumerate(value))
    raise ConfigError(f"unsupported field type for {value!r}", path)


def _section(data: dict, name: str, defaults, keys) -> dict:
    section = data.get(name, {})
    if section is None:
        section = {}
    if not isinstance(section, dict):
        raise ConfigError("expected a mapping", name)
    unknown = sorted(set(section) - set(keys))
    if unknown:
        raise ConfigError(f"unknown key {unknown[0]!r}", f"{name}.{unknown[0]}")
    return {k: _coerce(v, getattr(defaults, k), f"{name}.{k}") for k, v in section.items()}


def from_dict(data: dict) -> RunConfig:
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("top level must be a mapping", "<root>")
    sections = ("world", "train", "augment", "loss", "fusion", "output")
    unknown = sorted(set(data) - set(sections))
    if unknown:
        raise ConfigError("unknown section", unknown[0])
    base = RunConfig()
    world = replace(base.world, **_section(data, "world", base.world, [f.name for f in fields(WorldConfig)]))
    aug_kw = _section(data, "augment", base.train.augment, [f.name for f in fields(AugmentConfig)])
    try:
        augment = replace(base.train.augment, **aug_kw)
    except Exception as exc:
        raise ConfigError(str(exc), "augment") from exc
    loss = replace(base.train.loss, **_section(data, "loss", base.train.loss, [f.name for f in fields(LossConfig)]))
    train_kw = _section(data, "train", base.train, TRAIN_KEYS)
    train_kw.update(_section(data, "fusion", base.train, FUSION_KEYS))
    train = replace(base.train, loss=loss, augment=augment, **train_kw)
    output = replace(base.output, **_section(data, "output", base.output, [f.name for f in fields(OutputConfig)]))
    return RunConfig(world, train, output)


def loads(text: str) -> RunConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML: {exc}", "<file>") from exc
    return from_dict(data)


def apply_overrides(cfg: RunConfig, assignments=(), environ=None) -> RunConfig:
    """Apply ``section.key=value`` overrides, then the seed environment variable."""
    data = cfg.to_dict()
    for item in assignments:
        if "=" not in item:
            raise ConfigError(f"override must look like section.key=value, got {item!r}", "--set")
        path, raw = item.split("=", 1)
        parts = path.strip().split(".")
        if len(parts) != 2 or parts[0] not in data:
            raise ConfigError("override key must be section.key", path)
        if parts[1] not in data[parts[0]]:
            raise ConfigError("unknown key", path)
        data[parts[0]][parts[1]] = yaml.safe_load(raw)
    environ = os.environ if environ is None else environ
    if environ.get(SEED_ENV):
        try:
            data["train"]["seed"] = int(environ[SEED_ENV])
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer", SEED_ENV) from None
    return from_dict(data)


def load(path, assignments=(), environ=None) -> RunConfig:
    if path is None:
        cfg = RunConfig()
    else:
        try:
            with open(path, encoding="utf-8") as fh:
                cfg = loads(fh.read())
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}", str(path)) from exc
    return apply_overrides(cfg, assignments, environ).validate()
