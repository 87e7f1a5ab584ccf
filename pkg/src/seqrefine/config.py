"""Layered JSON run configuration with dotted-key overrides.

A config starts from the built-in defaults, merges an optional JSON file on
top, then applies ``key.path=value`` overrides from the command line. Any
key that the defaults do not know is rejected with its full dotted path, so
typos fail loudly instead of silently training with a default.
"""

from __future__ import annotations

import copy
import json


class ConfigError(ValueError):
    """Bad config file or override; the message carries the dotted key path."""


DEFAULTS = {
    "seed": 1,
    "workers": 1,
    "data": {
        "train": None,
        "dev": None,
        "test": None,
    },
    "paths": {
        "checkpoint": None,
    },
    "synth": {
        "num_types": 3,
        "vocab_size": 72,
        "min_length": 9,
        "max_length": 14,
        "ambiguous_mention_prob": 0.2,
        "constraint_rules": [[1, -2]],
        "sizes": {"train": 400, "dev": 120, "test": 160},
    },
    "encoder": {
        "word_dim": 100,
        "char_emb_dim": 30,
        "char_dim": 50,
        "hidden_size": 400,
    },
    "refiner": {
        "layers": 2,
        "heads": 5,
        "head_dim": 80,
        "ffn_dim": 128,
        "max_offset": 512,
    },
    "train": {
        "epochs": 30,
        "batch_size": 10,
        "sgd_lr": 0.015,
        "sgd_decay": 0.05,
        "adam_lr": 0.0001,
        "embed_dropout": 0.5,
        "recurrent_dropout": 0.25,
        "clip_norm": 5.0,
        "patience": 5,
        "samples": 8,
        "joint": False,
    },
    "decode": {
        "mode": "mix",
        "gamma": None,
        "samples": 8,
        "legalize": False,
    },
    "crf": {
        "epochs": 10,
        "lr": 0.05,
    },
    "sweep": {
        "split": "dev",
    },
    "bench": {
        "sentences": 40,
        "min_length": 30,
        "max_length": 60,
        "num_labels": 73,
        "c_range": [5, 10, 20, 40, 80],
        "repeats": 5,
        "target_time": 0.02,
    },
}


def default_config() -> dict:
    return copy.deepcopy(DEFAULTS)


def _check_type(path: str, default, value):
    if default is None or value is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"config key '{path}' expects a boolean, got {value!r}")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"config key '{path}' expects an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"config key '{path}' expects a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"config key '{path}' expects a string, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"config key '{path}' expects a list, got {value!r}")
        return value
    raise ConfigError(f"config key '{path}' has unsupported type {type(default).__name__}")


def _merge(base: dict, incoming: dict, prefix: str = "") -> None:
    for key, value in incoming.items():
        path = f"{prefix}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key '{path}'")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key '{path}' expects a section, got {value!r}")
            _merge(base[key], value, f"{path}.")
        else:
            base[key] = _check_type(path, base[key], value)


def load_config(path=None) -> dict:
    """Defaults overlaid with the JSON file at ``path``, if given."""
    config = default_config()
    if path is None:
        return config
    try:
        with open(path, encoding="utf-8") as handle:
            data = json.load(handle)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as err:
        raise ConfigError(f"config file {path} is not valid JSON: {err}")
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    _merge(config, data)
    return config


def apply_overrides(config: dict, pairs) -> dict:
    """Apply ``key.path=value`` strings in order; values parse as JSON."""
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} is not of the form key=value")
        dotted, raw = pair.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw  # bare strings need no quoting
        node = config
        parts = dotted.split(".")
        for i, part in enumerate(parts[:-1]):
            if part not in node or not isinstance(node[part], dict):
                raise ConfigError(f"unknown config key '{'.'.join(parts[: i + 1])}'")
            node = node[part]
        leaf = parts[-1]
        if leaf not in node:
            raise ConfigError(f"unknown config key '{dotted}'")
        if isinstance(node[leaf], dict):
            raise ConfigError(f"config key '{dotted}' is a section, not a value")
        node[leaf] = _check_type(dotted, node[leaf], value)
    return config


def write_snapshot(config: dict, path) -> None:
    """Resolved-config snapshot; with the seed it pins every artifact byte."""
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(config, handle, indent=2, sort_keys=True)
        handle.write("\n")
