"""Run configuration: presets, YAML files, overrides.

Precedence, lowest to highest: built-in defaults, named preset, config file,
``HRTR_SEED`` environment variable, ``--set key=value`` command-line overrides.
"""
from __future__ import annotations

import copy
import os
from dataclasses import dataclass
from pathlib import Path

import yaml

from .errors import ConfigError
from .loss import FocalSpec
from .optim import TrainConfig
from .windowing import SmoothSpec, WindowSpec

SEED_ENV = "HRTR_SEED"

_BASE = {
    "seed": 0,
    "output_dir": "runs/default",
    "data": {},
    "model": {
        "embed_dim": 1024,
        "num_layers": 3,
        "num_heads": 4,
        "ffn_hidden": 512,
        "head_dim": None,
        "dropout": 0.2,
        "ffn_activation": "relu",
        "positional_encoding": True,
    },
    "train": {
        "epochs": 25,
        "batch_size": 8,
        "lr": 1e-3,
        "momentum": 0.9,
        "weight_decay": 1e-4,
        "plateau_factor": 0.01,
        "plateau_patience": 5,
        "plateau_monitor": "train_loss",
        "clip_max_norm": 5.0,
        "min_lr": 1e-6,
        "model_selection": "final",
    },
    "window": {"size": 200, "stride": 10, "tail": True},
    "smooth": {"window": 25},
    "focal": {"alpha": 25.0, "gamma": 2.0},
    "eval": {"aggregate": "mean", "split": "test"},
}

PRESETS = {
    "strokerehab-video": {
        "window": {"size": 200, "stride": 10},
        "smooth": {"window": 25},
    },
    "strokerehab-imu": {
        "window": {"size": 500, "stride": 10},
        "smooth": {"window": 25},
    },
    "salads50": {
        "model": {"num_heads": 2, "ffn_hidden": 256},
        "train": {"epochs": 10, "batch_size": 2, "clip_max_norm": 60.0},
        "window": {"size": 5000, "stride": 500},
        "smooth": {"window": 200},
    },
}


def deep_merge(base: dict, update: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def preset(name: str) -> dict:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return deep_merge(_BASE, PRESETS[name])


def parse_override(text: str) -> tuple[list[str], object]:
    key, sep, raw = text.partition("=")
    if not sep or not key:
        raise ConfigError(f"override must look like key=value, got {text!r}")
    try:
        value = yaml.safe_load(raw) if raw else ""
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse override value {raw!r}: {exc}") from None
    return key.split("."), value


def apply_override(raw: dict, dotted: list[str], value) -> dict:
    out = copy.deepcopy(raw)
    node = out
    for part in dotted[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot set {'.'.join(dotted)}: {part} is not a section")
    node[dotted[-1]] = value
    return out


def _build(cls, section: dict, name: str):
    try:
        return cls(**section)
    except TypeError as exc:
        raise ConfigError(f"bad keys in [{name}]: {exc}") from None


@dataclass
class RunConfig:
    raw: dict
    base_dir: Path

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    @property
    def output_dir(self) -> Path:
        return self._path(self.raw["output_dir"])

    def _path(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p

    def data_paths(self) -> dict[str, Path]:
        data = self.raw.get("data") or {}
        needed = ("features_dir", "labels_dir", "vocab_file", "split_file")
        missing = [k for k in needed if k not in data]
        if "root" in data:
            root = self._path(data["root"])
            defaults = {
                "features_dir": root / "features",
                "labels_dir": root / "labels",
                "vocab_file": root / "vocab.txt",
                "split_file": root / "split.txt",
            }
            return {k: self._path(data[k]) if k in data else defaults[k] for k in needed}
        if missing:
            raise ConfigError(f"data section missing keys: {missing} (or give data.root)")
        return {k: self._path(data[k]) for k in needed}

    def train_config(self) -> TrainConfig:
        return TrainConfig.from_dict({**self.raw["train"], "seed": self.seed})

    def window_spec(self) -> WindowSpec:
        return _build(WindowSpec, self.raw["window"], "window")

    def smooth_spec(self) -> SmoothSpec:
        return _build(SmoothSpec, self.raw["smooth"], "smooth")

    def focal_spec(self) -> FocalSpec:
        f = self.raw["focal"]
        alpha = f["alpha"]
        return FocalSpec(alpha=tuple(alpha) if isinstance(alpha, list) else float(alpha),
                         gamma=float(f["gamma"]))

    def model_kwargs(self) -> dict:
        return dict(self.raw["model"])


def load_run_config(path=None, overrides=(), preset_name: str | None = None,
                    env=None) -> RunConfig:
    """Resolve a :class:`RunConfig` from file, preset, environment and overrides."""
    env = os.environ if env is None else env
    file_raw: dict = {}
    base_dir = Path.cwd()
    if path is not None:
        path = Path(path)
        try:
            file_raw = yaml.safe_load(path.read_text()) or {}
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from None
        if not isinstance(file_raw, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        base_dir = path.resolve().parent
    name = preset_name or file_raw.get("preset")
    raw = preset(name) if name else copy.deepcopy(_BASE)
    raw = deep_merge(raw, {k: v for k, v in file_raw.items() if k != "preset"})
    if name:
        raw["preset"] = name
    if env.get(SEED_ENV):
        try:
            raw["seed"] = int(env[SEED_ENV])
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer") from None
    for item in overrides:
        raw = apply_override(raw, *parse_override(item))
    known = set(_BASE) | {"preset"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    cfg = RunConfig(raw, base_dir)
    # validate nested sections eagerly so errors surface as config errors
    cfg.train_config(), cfg.window_spec(), cfg.smooth_spec(), cfg.focal_spec()
    return cfg
