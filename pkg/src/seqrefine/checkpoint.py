"""Checkpoint serialization: one JSON manifest per trained model pair.

A manifest carries a format version, free-form metadata (config snapshot,
seed, tuned threshold, vocabulary, label set), and every parameter as a
shape plus row-major values. JSON keeps the artifact inspectable and, with
sorted keys, byte-stable: identical training runs write identical files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """Manifest missing, malformed, or inconsistent with the model."""


@dataclass(frozen=True)
class Checkpoint:
    params: dict
    metadata: dict


def _flatten(value) -> np.ndarray:
    array = value.data if hasattr(value, "data") else np.asarray(value)
    return np.ascontiguousarray(array, dtype=np.float64)


def save_checkpoint(path, params, metadata=None) -> None:
    """Write a manifest. ``params`` is an iterable of (name, tensor-or-array)."""
    table = {}
    for name, value in params:
        if name in table:
            raise CheckpointError(f"duplicate parameter name {name!r}")
        array = _flatten(value)
        table[name] = {"shape": list(array.shape), "values": array.ravel().tolist()}
    payload = {
        "version": FORMAT_VERSION,
        "metadata": metadata or {},
        "params": table,
    }
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, sort_keys=True, separators=(",", ":"))
        handle.write("\n")


def load_checkpoint(path) -> Checkpoint:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            payload = json.load(handle)
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint not found: {path}")
    except json.JSONDecodeError as err:
        raise CheckpointError(f"checkpoint {path} is not valid JSON: {err}")
    if not isinstance(payload, dict) or "version" not in payload:
        raise CheckpointError(f"checkpoint {path} has no version field")
    if payload["version"] != FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint {path} has version {payload['version']}, expected {FORMAT_VERSION}"
        )
    params = {}
    for name, entry in payload.get("params", {}).items():
        shape = tuple(entry["shape"])
        values = np.array(entry["values"], dtype=np.float64)
        expected = int(np.prod(shape)) if shape else 1
        if values.size != expected:
            raise CheckpointError(
                f"parameter {name!r}: {values.size} values do not fill shape {shape}"
            )
        params[name] = values.reshape(shape)
    return Checkpoint(params=params, metadata=payload.get("metadata", {}))


def restore_parameters(checkpoint: Checkpoint, items) -> None:
    """Copy manifest arrays into live tensors, name by name, in place."""
    items = list(items)
    live = {name for name, _ in items}
    stored = set(checkpoint.params)
    if live != stored:
        missing = sorted(stored - live)
        extra = sorted(live - stored)
        raise CheckpointError(
            f"parameter names disagree: manifest-only {missing}, model-only {extra}"
        )
    for name, tensor in items:
        stored_array = checkpoint.params[name]
        if tensor.data.shape != stored_array.shape:
            raise CheckpointError(
                f"parameter {name!r}: model shape {tensor.data.shape} "
                f"vs manifest {stored_array.shape}"
            )
        tensor.data[:] = stored_array
