"""Checkpoint container and binary serialization.

Binary layout: magic "SERK", u32 format version, u32 entry count, then per
entry (u16 name length, UTF-8 name, u8 rank, u64-LE dims, f32-LE values).
Optimizer moments ride along as reserved-prefix entries; scalars and frozen
flags live in a JSON sidecar next to the binary.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from serlab.tensor import ParameterStore

MAGIC = b"SERK"
FORMAT_VERSION = 1
ADAM_M_PREFIX = "__adam_m__."
ADAM_V_PREFIX = "__adam_v__."


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    store: ParameterStore
    epoch: int = 0
    best_metric: float = 0.0
    config_hash: str = ""
    mode: str = ""
    encoder_config: dict = field(default_factory=dict)
    target_store: ParameterStore | None = None
    extra: dict = field(default_factory=dict)


def _write_entries(fh, arrays: dict[str, np.ndarray]) -> None:
    fh.write(MAGIC)
    fh.write(struct.pack("<II", FORMAT_VERSION, len(arrays)))
    for name, arr in arrays.items():
        data = np.ascontiguousarray(arr, dtype="<f4")
        name_b = name.encode("utf-8")
        fh.write(struct.pack("<H", len(name_b)))
        fh.write(name_b)
        fh.write(struct.pack("<B", data.ndim))
        for dim in data.shape:
            fh.write(struct.pack("<Q", dim))
        fh.write(data.tobytes())


def _read_entries(fh) -> dict[str, np.ndarray]:
    magic = fh.read(4)
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}, expected {MAGIC!r}")
    version, count = struct.unpack("<II", fh.read(8))
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format version {version}")
    arrays = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", fh.read(2))
        name = fh.read(name_len).decode("utf-8")
        (rank,) = struct.unpack("<B", fh.read(1))
        dims = [struct.unpack("<Q", fh.read(8))[0] for _ in range(rank)]
        n = int(np.prod(dims)) if dims else 1
        data = np.frombuffer(fh.read(n * 4), dtype="<f4").reshape(dims).copy()
        arrays[name] = data
    return arrays


def _flatten_store(store: ParameterStore, tag: str) -> dict[str, np.ndarray]:
    arrays = {}
    for name, arr in store.entries.items():
        arrays[f"{tag}{name}"] = arr
    for name, arr in store.adam_m.items():
        arrays[f"{tag}{ADAM_M_PREFIX}{name}"] = arr
    for name, arr in store.adam_v.items():
        arrays[f"{tag}{ADAM_V_PREFIX}{name}"] = arr
    return arrays


def _unflatten_store(arrays: dict[str, np.ndarray], tag: str, sidecar: dict) -> ParameterStore:
    store = ParameterStore()
    frozen = sidecar["frozen"]
    for name, arr in arrays.items():
        if not name.startswith(tag):
            continue
        local = name[len(tag):]
        if local.startswith(ADAM_M_PREFIX):
            store.adam_m[local[len(ADAM_M_PREFIX):]] = arr
        elif local.startswith(ADAM_V_PREFIX):
            store.adam_v[local[len(ADAM_V_PREFIX):]] = arr
        else:
            store.entries[local] = arr
            store.frozen[local] = bool(frozen.get(local, False))
    store.adam_t = {k: int(v) for k, v in sidecar.get("adam_t", {}).items()}
    return store


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = _flatten_store(ckpt.store, "online/")
    if ckpt.target_store is not None:
        arrays.update(_flatten_store(ckpt.target_store, "target/"))
    with open(path, "wb") as fh:
        _write_entries(fh, arrays)
    sidecar = {
        "format_version": FORMAT_VERSION,
        "epoch": ckpt.epoch,
        "best_metric": ckpt.best_metric,
        "config_hash": ckpt.config_hash,
        "mode": ckpt.mode,
        "encoder_config": ckpt.encoder_config,
        "frozen": {k: bool(v) for k, v in ckpt.store.frozen.items()},
        "adam_t": ckpt.store.adam_t,
        "has_target": ckpt.target_store is not None,
        "extra": ckpt.extra,
    }
    with open(path.with_suffix(path.suffix + ".json"), "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    sidecar_path = path.with_suffix(path.suffix + ".json")
    if not sidecar_path.exists():
        raise CheckpointError(f"missing sidecar {sidecar_path}")
    with open(sidecar_path, encoding="utf-8") as fh:
        sidecar = json.load(fh)
    with open(path, "rb") as fh:
        arrays = _read_entries(fh)
    store = _unflatten_store(arrays, "online/", sidecar)
    target = _unflatten_store(arrays, "target/", sidecar) if sidecar.get("has_target") else None
    if target is not None and not target.entries:
        target = None
    return Checkpoint(
        store=store,
        epoch=int(sidecar["epoch"]),
        best_metric=float(sidecar["best_metric"]),
        config_hash=sidecar.get("config_hash", ""),
        mode=sidecar.get("mode", ""),
        encoder_config=sidecar.get("encoder_config", {}),
        target_store=target,
        extra=sidecar.get("extra", {}),
    )
