"""Checkpoints: a JSON manifest plus one concatenated parameter blob.

The manifest (``<base>.json``) records the format version, the network
config, a table of (name, shape, dtype, offset) for every parameter, the
optimizer velocity table, the training RNG state, and the epoch counter.
The blob (``<base>.bin``) holds the little-endian buffers back to back in
manifest order.  Restoring the RNG and velocity makes a resumed run
bit-identical to the uninterrupted one.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .errors import ManifestError, VersionError
from .network import NetworkConfig, SegNetwork, build_network
from .training import TrainState

FORMAT_VERSION = 1

_DTYPES = {"float32": np.dtype("<f4"), "float64": np.dtype("<f8")}


def _base_path(path: str) -> str:
    for suffix in (".json", ".bin"):
        if path.endswith(suffix):
            return path[: -len(suffix)]
    return path


def _atomic_write(path: str, data: bytes) -> None:
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)


def _table_and_blob(entries, blob: bytearray) -> list[dict]:
    table = []
    for name, arr in entries:
        dtype = _DTYPES[str(arr.dtype)]
        buf = np.ascontiguousarray(arr, dtype=dtype).tobytes()
        table.append({
            "name": name,
            "shape": list(arr.shape),
            "dtype": str(arr.dtype),
            "offset": len(blob),
            "nbytes": len(buf),
        })
        blob.extend(buf)
    return table


def save_checkpoint(net: SegNetwork, path: str,
                    state: TrainState | None = None) -> None:
    """Write manifest + blob atomically; includes optimizer state when given."""
    base = _base_path(path)
    blob = bytearray()
    named = list(net.named_parameters())
    table = _table_and_blob(((n, t.data) for n, t in named), blob)
    manifest = {
        "format_version": FORMAT_VERSION,
        "config": net.cfg.to_dict(),
        "parameters": table,
        "epoch": state.epoch if state else 0,
        "rng_state": state.rng_state if state else None,
        "history": state.history if state else [],
        "prior_frozen": bool(net.prior.frozen) if net.prior else None,
    }
    if state and state.velocity is not None:
        vel_entries = [(name, v) for (name, _), v in zip(named, state.velocity)]
        manifest["velocity"] = _table_and_blob(vel_entries, blob)
    _atomic_write(base + ".bin", bytes(blob))
    _atomic_write(base + ".json",
                  (json.dumps(manifest, indent=1) + "\n").encode())


def _read_entry(blob: bytes, entry: dict) -> np.ndarray:
    dtype = _DTYPES.get(entry["dtype"])
    if dtype is None:
        raise ManifestError(f"unknown parameter dtype {entry['dtype']!r}")
    shape = tuple(entry["shape"])
    nbytes = int(np.prod(shape)) * dtype.itemsize
    off = entry["offset"]
    if entry.get("nbytes", nbytes) != nbytes or off + nbytes > len(blob):
        raise ManifestError(
            f"parameter {entry['name']!r}: blob slice [{off}, {off + nbytes}) "
            f"inconsistent with shape {shape}")
    arr = np.frombuffer(blob, dtype=dtype, count=int(np.prod(shape)), offset=off)
    return arr.reshape(shape).astype(entry["dtype"], copy=True)


def load_checkpoint(path: str, seed: int = 0) -> tuple[SegNetwork, TrainState]:
    """Rebuild the network from the stored config and restore every buffer."""
    base = _base_path(path)
    with open(base + ".json") as f:
        manifest = json.load(f)
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise VersionError(
            f"checkpoint format {version!r} is incompatible with "
            f"reader version {FORMAT_VERSION}")
    with open(base + ".bin", "rb") as f:
        blob = f.read()
    cfg = NetworkConfig.from_dict(manifest["config"])
    net = build_network(cfg, seed=seed)
    stored = {e["name"]: e for e in manifest["parameters"]}
    for name, tensor in net.named_parameters():
        entry = stored.pop(name, None)
        if entry is None:
            raise ManifestError(f"manifest is missing parameter {name!r}")
        arr = _read_entry(blob, entry)
        if arr.shape != tensor.data.shape:
            raise ManifestError(
                f"parameter {name!r}: stored shape {arr.shape} != "
                f"network shape {tensor.data.shape}")
        tensor.data = arr
    if stored:
        raise ManifestError(
            f"manifest has {len(stored)} unknown parameters, e.g. "
            f"{next(iter(stored))!r}")
    if net.prior is not None and manifest.get("prior_frozen") is not None:
        net.prior.frozen = bool(manifest["prior_frozen"])
    state = TrainState(
        epoch=manifest.get("epoch", 0),
        rng_state=manifest.get("rng_state"),
        history=manifest.get("history", []),
    )
    if "velocity" in manifest:
        state.velocity = [_read_entry(blob, e) for e in manifest["velocity"]]
    return net, state
