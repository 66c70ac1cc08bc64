"""YAML run configuration: defaults, validation and ``key=value`` overrides.

Validation is structural: every key must exist in :data:`DEFAULTS`, values
must have the default's type (ints are accepted for floats), and keys whose
default is :data:`REQUIRED` must be supplied.  Errors name the full key path.
"""

from __future__ import annotations

import copy
from pathlib import Path
from typing import Any, Iterable

import yaml

from .seeding import derive_seed

REQUIRED = object()
ANY = object()

DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "out": "runs/default",
    "workers": 1,
    "generate": {
        "duration": REQUIRED,
        "mean_request_interval": REQUIRED,
        "traces": 1,
        "latency": [0.0005, 0.002],
        "payload_range": [4, 16],
        "event_jitter": 0.0,
        "topology": ANY,
    },
    "dataset": {
        "traces": ANY,
        "window": 32,
        "stride": ANY,
        "block_len": 256,
        "blocks_per_class": ANY,
        "windows_per_class": ANY,
        "ratio": 0.8,
        "include_addresses": False,
        "require_signature": True,
        "ranges": ANY,
    },
    "train": {
        "dataset": ANY,
        "variants": ["L-A"],
        "model": {
            "mapped": 64,
            "hidden": 128,
            "conv_channels": [16, 32],
        },
        "max_epochs": 150,
        "batch_size": 64,
        "lr": 0.001,
        "patience": 20,
        "clip": 5.0,
    },
    "eval": {
        "dataset": ANY,
        "checkpoints": ANY,
        "split": "val",
        "grouping": True,
        "roc": True,
    },
    "bench": {
        "variants": ["C", "C-A", "R", "R-A", "L", "L-A"],
        "windows": [32, 48, 64, 80, 96, 112, 128],
        "repetitions": 1000,
        "warmup": 100,
        "checkpoints": ANY,
        "model": {
            "features": 21,
            "mapped": 64,
            "hidden": 128,
            "conv_channels": [16, 32],
        },
    },
    "gradcheck": {
        "variants": ["C", "C-A", "R", "R-A", "L", "L-A"],
        "window": 8,
        "features": 12,
        "mapped": 16,
        "hidden": 16,
        "conv_channels": [4, 8],
        "batch": 3,
        "dtype": "float64",
        "tolerance": 0.001,
        "max_entries": ANY,
        "primitives": True,
    },
}


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


def _type_ok(default, value) -> bool:
    if isinstance(default, bool):
        return isinstance(value, bool)
    if isinstance(default, int):
        return isinstance(value, int) and not isinstance(value, bool)
    if isinstance(default, float):
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if isinstance(default, str):
        return isinstance(value, str)
    if isinstance(default, list):
        return isinstance(value, (list, tuple))
    return True


def _merge(defaults: dict, user: dict, path: str) -> dict:
    if not isinstance(user, dict):
        raise ConfigError(path, f"expected a mapping, got {type(user).__name__}")
    out = {}
    for key in user:
        if key not in defaults:
            raise ConfigError(f"{path}.{key}" if path else str(key), "unknown key")
    for key, default in defaults.items():
        kp = f"{path}.{key}" if path else key
        if key in user:
            value = user[key]
            if isinstance(default, dict):
                out[key] = _merge(default, value if value is not None else {}, kp)
            elif default is REQUIRED or default is ANY:
                out[key] = value
            else:
                if not _type_ok(default, value):
                    raise ConfigError(kp, f"expected {type(default).__name__}, got {value!r}")
                out[key] = float(value) if isinstance(default, float) else value
        elif isinstance(default, dict):
            out[key] = _merge(default, {}, kp)
        elif default is ANY or default is REQUIRED:
            out[key] = None
        else:
            out[key] = copy.deepcopy(default)
    return out


def check_required(cfg: dict, section: str) -> None:
    """Raise for any REQUIRED key of ``section`` left unset."""
    defaults = DEFAULTS[section]
    for key, default in defaults.items():
        if default is REQUIRED and cfg[section].get(key) is None:
            raise ConfigError(f"{section}.{key}", "required key is missing")


def parse_override(item: str) -> tuple[list[str], Any]:
    if "=" not in item:
        raise ConfigError("", f"override {item!r} is not of the form key=value")
    key, raw = item.split("=", 1)
    key = key.strip()
    if not key:
        raise ConfigError("", f"override {item!r} has an empty key")
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(key, f"cannot parse override value: {exc}") from None
    return key.split("."), value


def apply_overrides(tree: dict, overrides: Iterable[str]) -> dict:
    tree = copy.deepcopy(tree)
    for item in overrides:
        keys, value = parse_override(item)
        node = tree
        for k in keys[:-1]:
            nxt = node.setdefault(k, {})
            if not isinstance(nxt, dict):
                raise ConfigError(".".join(keys), f"{k!r} is not a mapping")
            node = nxt
        node[keys[-1]] = value
    return tree


def load_config(path: str | Path | None = None, overrides: Iterable[str] = (),
                seed: int | None = None, out: str | None = None,
                workers: int | None = None) -> dict:
    user: dict = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError("", f"cannot read config {path}: {exc.strerror}") from None
        try:
            user = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError("", f"invalid YAML in {path}: {exc}") from None
    user = apply_overrides(user, overrides)
    for key, value in (("seed", seed), ("out", out), ("workers", workers)):
        if value is not None:
            user[key] = value
    cfg = _merge(DEFAULTS, user, "")
    if cfg["workers"] < 1:
        raise ConfigError("workers", "must be >= 1")
    return cfg


def stage_seed(cfg: dict, stage: str, index: int = 0) -> int:
    return derive_seed(cfg["seed"], stage, index)


def dump_config(cfg: dict) -> str:
    return yaml.safe_dump(cfg, sort_keys=True, default_flow_style=False)
