"""Experiment configuration (YAML key/value tree, unknown keys rejected).

Example::

    preset: gw                 # gw | botany | iam: sets lr_step and total_iterations
    arch: lenet                # lenet | tppnet | resnet | densenet
    arch_options:              # width_divisor, stem_stride, growth_rate, block_layers, compression
      width_divisor: 1
    tpp_mode: max              # or avg
    learning_rate: 1.0e-4
    lr_step: 70000
    total_iterations: 80000
    batch_size: 10
    seed: 0
    phoc:
      alphabet: abcdefghijklmnopqrstuvwxyz0123456789
      levels: [1, 2, 4, 8]
      overlap_threshold: 0.5
      lowercase: true
    data:
      split: official          # or gw_cv (manifest + fold 1..4)
      train_manifest: train.tsv
      test_manifest: test.tsv
      stop_words: stopwords.txt
    augmentation:
      target_total: 500000
      rotation: 5.0
      shear: 5.0
      scale: [0.9, 1.1]
      translation: 0.05
      seed: 0
    output_dir: runs/lenet-gw
    checkpoint_period: 0       # 0 = final checkpoint only
    log_period: 100

Explicit keys override a preset.  Relative paths are resolved against the
directory holding the config file.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from .arch import ARCHITECTURES
from .data import AugmentationPlan
from .errors import ConfigError
from .phoc import PhocConfig

PRESETS = {
    # (lr_step, total_iterations)
    "gw": (70_000, 80_000),
    "botany": (70_000, 80_000),
    "iam": (100_000, 240_000),
}


@dataclass
class DataConfig:
    split: str = "official"
    train_manifest: str = ""
    test_manifest: str = ""
    manifest: str = ""
    fold: int = 1
    stop_words: str = ""

    def __post_init__(self):
        if self.split not in ("official", "gw_cv"):
            raise ConfigError(f"data.split must be 'official' or 'gw_cv', got {self.split!r}")
        if self.split == "gw_cv" and not 1 <= int(self.fold) <= 4:
            raise ConfigError("data.fold must be 1..4 for gw_cv")


@dataclass
class TrainConfig:
    arch: str = "lenet"
    arch_options: dict = field(default_factory=dict)
    tpp_mode: str = "max"
    learning_rate: float = 1e-4
    lr_step: int = 70_000
    total_iterations: int = 80_000
    batch_size: int = 10
    seed: int = 0
    phoc: PhocConfig = field(default_factory=PhocConfig)
    data: DataConfig = field(default_factory=DataConfig)
    augmentation: AugmentationPlan = field(default_factory=AugmentationPlan)
    output_dir: str = "run"
    checkpoint_period: int = 0
    log_period: int = 100
    base_dir: str = field(default=".", repr=False)

    def __post_init__(self):
        if self.arch not in ARCHITECTURES:
            raise ConfigError(f"arch must be one of {ARCHITECTURES}, got {self.arch!r}")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        if self.total_iterations < 1:
            raise ConfigError("total_iterations must be at least 1")
        if not 0 < self.lr_step <= self.total_iterations:
            raise ConfigError("lr_step must lie in 1..total_iterations")
        if self.tpp_mode not in ("max", "avg"):
            raise ConfigError("tpp_mode must be 'max' or 'avg'")

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def learning_rate_at(self, iteration: int) -> float:
        """Zero-based iteration; the rate drops tenfold once, at ``lr_step``."""
        return self.learning_rate if iteration < self.lr_step else self.learning_rate / 10.0

    def to_dict(self) -> dict:
        d = {}
        for f in fields(self):
            if f.name == "base_dir":
                continue
            v = getattr(self, f.name)
            if isinstance(v, PhocConfig):
                v = v.to_dict()
            elif isinstance(v, AugmentationPlan):
                v = v.to_dict()
            elif isinstance(v, DataConfig):
                v = {g.name: getattr(v, g.name) for g in fields(v)}
            d[f.name] = v
        return d


_SCALARS = {
    "learning_rate": float, "lr_step": int, "total_iterations": int, "batch_size": int,
    "seed": int, "checkpoint_period": int, "log_period": int, "arch": str,
    "output_dir": str, "tpp_mode": str,
}
_AUG = {"target_total": int, "rotation": float, "shear": float, "scale": list,
        "translation": float, "seed": int}
_DATA = {"split": str, "train_manifest": str, "test_manifest": str, "manifest": str,
         "fold": int, "stop_words": str}
_PHOC = {"alphabet": str, "levels": list, "overlap_threshold": float, "lowercase": bool}
_ARCH_OPTIONS = {"width_divisor": int, "stem_stride": int, "growth_rate": int,
                 "block_layers": list, "compression": float}


def _typed(section: str, raw: dict, schema: dict) -> dict:
    if not isinstance(raw, dict):
        raise ConfigError(f"{section or 'config'} must be a mapping")
    out = {}
    for key, value in raw.items():
        if key not in schema:
            where = f"{section}.{key}" if section else key
            raise ConfigError(f"unknown config key {where!r}")
        try:
            out[key] = schema[key](value) if schema[key] is not list else list(value)
        except (TypeError, ValueError):
            raise ConfigError(f"bad value for {section + '.' if section else ''}{key}: {value!r}")
    return out


def config_from_dict(raw: dict, base_dir=".") -> TrainConfig:
    raw = dict(raw or {})
    kwargs = {}
    preset = raw.pop("preset", None)
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        kwargs["lr_step"], kwargs["total_iterations"] = PRESETS[preset]
    sections = {"phoc": _PHOC, "data": _DATA, "augmentation": _AUG, "arch_options": _ARCH_OPTIONS}
    for key in raw:
        if key not in _SCALARS and key not in sections:
            raise ConfigError(f"unknown config key {key!r}")
    kwargs.update(_typed("", {k: v for k, v in raw.items() if k in _SCALARS}, _SCALARS))
    if "phoc" in raw:
        kwargs["phoc"] = PhocConfig.from_dict(_typed("phoc", raw["phoc"], _PHOC))
    if "data" in raw:
        kwargs["data"] = DataConfig(**_typed("data", raw["data"], _DATA))
    if "augmentation" in raw:
        kwargs["augmentation"] = AugmentationPlan(**_typed("augmentation", raw["augmentation"], _AUG))
    if "arch_options" in raw:
        kwargs["arch_options"] = _typed("arch_options", raw["arch_options"], _ARCH_OPTIONS)
    return TrainConfig(base_dir=str(base_dir), **kwargs)


def load_config(path) -> TrainConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_dict(raw, base_dir=path.parent)


def dump_config(config: TrainConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(config.to_dict(), sort_keys=False), encoding="utf-8")
