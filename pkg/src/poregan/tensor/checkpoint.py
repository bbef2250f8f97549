"""Parameter checkpoints: a JSON manifest plus one raw little-endian float64
file per array.

Layout of a checkpoint directory::

    manifest.json
    params/<id>.f64
    adam/<group>/<id>.m.f64, adam/<group>/<id>.v.f64
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..volume import atomic_write_bytes
from .core import Parameter
from .optim import AdamState

MANIFEST_VERSION = 1
_LE = "<f8"


class CheckpointError(ValueError):
    pass


def _write_array(path: Path, arr: np.ndarray) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    atomic_write_bytes(path, np.ascontiguousarray(arr, dtype=_LE).tobytes())


def _read_array(path: Path, shape) -> np.ndarray:
    if not path.is_file():
        raise FileNotFoundError(f"missing checkpoint payload {path}")
    raw = path.read_bytes()
    expected = int(np.prod(shape)) * 8
    if len(raw) != expected:
        raise CheckpointError(f"{path}: {len(raw)} bytes, expected {expected}")
    return np.frombuffer(raw, dtype=_LE).reshape(shape).astype(np.float64)


def save_parameters(directory, params, optimizers: dict[str, AdamState] | None = None, extra=None) -> None:
    """Write ``params`` (and optional named Adam states) under ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = [p.name for p in params]
    if len(set(names)) != len(names):
        raise CheckpointError("parameter identifiers must be unique")
    manifest = {
        "version": MANIFEST_VERSION,
        "dtype": "float64-le",
        "parameters": [{"id": p.name, "shape": list(p.shape)} for p in params],
        "optimizers": {},
        "extra": extra or {},
    }
    for p in params:
        _write_array(directory / "params" / f"{p.name}.f64", p.data)
    for group, state in (optimizers or {}).items():
        entry = {"hyperparameters": state.hyperparameters(), "t": state.t, "buffers": sorted(state.m)}
        for name in entry["buffers"]:
            _write_array(directory / "adam" / group / f"{name}.m.f64", state.m[name])
            _write_array(directory / "adam" / group / f"{name}.v.f64", state.v[name])
        manifest["optimizers"][group] = entry
    text = json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    atomic_write_bytes(directory / "manifest.json", text.encode())


def read_manifest(directory) -> dict:
    path = Path(directory) / "manifest.json"
    if not path.is_file():
        raise FileNotFoundError(f"missing checkpoint manifest {path}")
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
    if manifest.get("version") != MANIFEST_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {manifest.get('version')!r}")
    return manifest


def load_parameters(directory, params) -> dict[str, AdamState]:
    """Fill ``params`` in place from ``directory``; return stored Adam states."""
    directory = Path(directory)
    manifest = read_manifest(directory)
    stored = {e["id"]: tuple(e["shape"]) for e in manifest["parameters"]}
    by_name = {p.name: p for p in params}
    if set(stored) != set(by_name):
        missing = sorted(set(by_name) - set(stored))
        unknown = sorted(set(stored) - set(by_name))
        raise CheckpointError(f"parameter mismatch: missing {missing}, unexpected {unknown}")
    for name, p in by_name.items():
        if stored[name] != p.shape:
            raise CheckpointError(f"{name}: stored shape {stored[name]} != model shape {p.shape}")
        p.data[...] = _read_array(directory / "params" / f"{name}.f64", p.shape)
        p.zero_grad()

    states = {}
    for group, entry in manifest["optimizers"].items():
        state = AdamState(**entry["hyperparameters"], t=entry["t"])
        for name in entry["buffers"]:
            shape = by_name[name].shape
            state.m[name] = _read_array(directory / "adam" / group / f"{name}.m.f64", shape)
            state.v[name] = _read_array(directory / "adam" / group / f"{name}.v.f64", shape)
        states[group] = state
    return states
