"""Run configuration: YAML file, built-in defaults and command-line overrides.

Grammar (every section and key optional; unknown keys are rejected)::

    seed: 0                      # master seed: data, split, init, shuffling, noise
    data:
      dataset: csth              # csth (one fault) | te (ten faults on 22 variables)
      n_vars: 5                  # csth only; te always uses 22
      fault_variable: 2          # csth only, 0-based
      fault_kind: step           # csth only: step | random-variation
      magnitude: 3.0
      random_magnitude: null     # te random-variation faults; null means magnitude
      window: 20
      stride: null               # null means non-overlapping (stride = window)
      scenario: long-tail        # balanced | imbalanced | long-tail
      scale: 1.0                 # multiplies the preset sample counts
    model:
      channels: [16, 32]
      reduction: 4
      alpha: 7
      hidden: 128
      embed_dim: 64
    train:
      batch_size: 32
      epochs_stage1: 100
      epochs_stage2: 50
      lr_stage1: 0.001
      lr_stage2: 0.1
      momentum: 0.9
      temperature: 0.5
      noise_scale: 1.0
      freeze_encoder: true
    paths:
      data: data                 # dataset directory written by generate, read by the others
      out: run                   # reports, heatmaps
      checkpoint: null           # null means <out>/model.ckpt

Precedence: built-in defaults, then the file, then command-line flags.
"""

from __future__ import annotations

import copy
from pathlib import Path
from typing import Optional

import yaml

from .data.scenario import KINDS
from .data.synthetic import FAULT_KINDS
from .errors import ConfigError
from .model import ModelConfig
from .training import TrainConfig

DATASETS = ("csth", "te")

DEFAULTS = {
    "seed": 0,
    "data": {
        "dataset": "csth", "n_vars": 5, "fault_variable": 2, "fault_kind": "step",
        "magnitude": 3.0, "random_magnitude": None, "window": 20, "stride": None,
        "scenario": "long-tail", "scale": 1.0,
    },
    "model": {"channels": [16, 32], "reduction": 4, "alpha": 7, "hidden": 128, "embed_dim": 64},
    "train": {
        "batch_size": 32, "epochs_stage1": 100, "epochs_stage2": 50, "lr_stage1": 0.001,
        "lr_stage2": 0.1, "momentum": 0.9, "temperature": 0.5, "noise_scale": 1.0,
        "freeze_encoder": True,
    },
    "paths": {"data": "data", "out": "run", "checkpoint": None},
}

# keys whose value may be null, and the type they take otherwise
_NULLABLE = {("data", "random_magnitude"): float, ("data", "stride"): int, ("paths", "checkpoint"): str}


def _check_type(where: str, value, default, nullable_type=None):
    if value is None:
        if nullable_type is None:
            raise ConfigError(f"{where}: null is not allowed")
        return None
    want = nullable_type or type(default)
    if want is bool:
        ok = isinstance(value, bool)
    elif want is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif want is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif want is list:
        ok = isinstance(value, list) and all(isinstance(v, int) and not isinstance(v, bool) for v in value)
    else:
        ok = isinstance(value, want)
    if not ok:
        raise ConfigError(f"{where}: expected {want.__name__}, got {value!r}")
    return value


def merge(base: dict, update: dict, prefix: str = "") -> dict:
    """Overlay ``update`` on ``base``, rejecting keys absent from ``base`` and ill-typed values."""
    if not isinstance(update, dict):
        raise ConfigError(f"{prefix or 'config'}: expected a mapping, got {update!r}")
    out = copy.deepcopy(base)
    for key, value in update.items():
        where = f"{prefix}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict):
            out[key] = merge(base[key], value or {}, where + ".")
        else:
            section = tuple(where.split("."))
            out[key] = _check_type(where, value, base[key], _NULLABLE.get(section))
    return out


def load_config(path: Optional[str] = None, overrides: Optional[dict] = None) -> dict:
    raw = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise FileNotFoundError(f"config file not found: {p}")
        try:
            raw = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{p}: not valid YAML: {exc}") from None
    cfg = merge(DEFAULTS, raw)
    cfg = merge(cfg, overrides or {})
    validate(cfg)
    return cfg


def validate(cfg: dict) -> None:
    d = cfg["data"]
    if d["dataset"] not in DATASETS:
        raise ConfigError(f"data.dataset must be one of {DATASETS}, got {d['dataset']!r}")
    if d["scenario"] not in KINDS:
        raise ConfigError(f"data.scenario must be one of {KINDS}, got {d['scenario']!r}")
    if d["fault_kind"] not in FAULT_KINDS:
        raise ConfigError(f"data.fault_kind must be one of {FAULT_KINDS}, got {d['fault_kind']!r}")
    if d["window"] < 1 or (d["stride"] is not None and d["stride"] < 1):
        raise ConfigError("data.window and data.stride must be >= 1")
    if d["scale"] <= 0:
        raise ConfigError(f"data.scale must be > 0, got {d['scale']}")
    train_config(cfg)
    model_config(cfg, d["n_vars"], 2)


def train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(seed=cfg["seed"], **cfg["train"])


def model_config(cfg: dict, height: int, n_classes: int) -> ModelConfig:
    m = cfg["model"]
    if len(m["channels"]) != 2:
        raise ConfigError(f"model.channels must list two layer widths, got {m['channels']}")
    return ModelConfig(height=height, width=cfg["data"]["window"], n_classes=n_classes,
                       channels=tuple(m["channels"]), reduction=m["reduction"], alpha=m["alpha"],
                       hidden=m["hidden"], embed_dim=m["embed_dim"], seed=cfg["seed"])


def dump_config(cfg: dict) -> str:
    return yaml.safe_dump(cfg, sort_keys=False)
