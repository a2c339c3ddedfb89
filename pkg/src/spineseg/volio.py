"""Raw volume files: a JSON sidecar header plus a little-endian payload.

A volume lives in two files, ``<base>.json`` and ``<base>.raw``.  The header
records shape, scalar type, kind (image or labels), voxel spacing, and
optional class names; the payload is the row-major scalar stream.  Both
writes are atomic (write-temp-then-rename) and byte-order explicit, so a
write/read roundtrip is bit-exact on any platform.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import CorruptFileError, FormatError

_DTYPES = {"f32": np.dtype("<f4"), "i32": np.dtype("<i4")}
_KINDS = ("image", "labels")


@dataclass
class VolumeData:
    array: np.ndarray
    kind: str
    spacing_mm: tuple[float, float, float] = (1.0, 1.0, 1.0)
    class_names: list[str] | None = None
    meta: dict = field(default_factory=dict)

    @property
    def shape(self):
        return self.array.shape


def _base_path(path: str) -> str:
    for suffix in (".json", ".raw"):
        if path.endswith(suffix):
            return path[: -len(suffix)]
    return path


def _atomic_write(path: str, data: bytes) -> None:
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)


def write_volume(path: str, array: np.ndarray, kind: str,
                 spacing_mm=(1.0, 1.0, 1.0), class_names=None,
                 meta: dict | None = None) -> None:
    """Write a 3D volume; images as f32, labels as i32."""
    if kind not in _KINDS:
        raise FormatError(f"unknown volume kind {kind!r}")
    array = np.asarray(array)
    if array.ndim == 4 and array.shape[0] == 1:
        array = array[0]
    if array.ndim != 3:
        raise FormatError(f"expected a 3D volume, got shape {array.shape}")
    dtype_name = "i32" if kind == "labels" else "f32"
    payload = np.ascontiguousarray(array.astype(_DTYPES[dtype_name]))
    base = _base_path(path)
    header = {
        "shape": list(array.shape),
        "dtype": dtype_name,
        "kind": kind,
        "spacing_mm": [float(s) for s in spacing_mm],
        "payload": os.path.basename(base) + ".raw",
    }
    if class_names is not None:
        header["class_names"] = list(class_names)
    if meta:
        header["meta"] = meta
    _atomic_write(base + ".raw", payload.tobytes())
    _atomic_write(base + ".json",
                  (json.dumps(header, indent=1) + "\n").encode())


def read_volume(path: str) -> VolumeData:
    """Read a volume pair; validates dtype, kind, and payload length."""
    base = _base_path(path)
    try:
        with open(base + ".json") as f:
            header = json.load(f)
    except json.JSONDecodeError as e:
        raise FormatError(f"unparseable header {base}.json: {e}") from e
    dtype_name = header.get("dtype")
    if dtype_name not in _DTYPES:
        raise FormatError(f"unknown dtype {dtype_name!r} in {base}.json")
    kind = header.get("kind")
    if kind not in _KINDS:
        raise FormatError(f"unknown kind {kind!r} in {base}.json")
    if kind == "labels" and dtype_name != "i32":
        raise FormatError(
            f"labels volume must be i32, header says {dtype_name!r}")
    shape = tuple(int(s) for s in header["shape"])
    dtype = _DTYPES[dtype_name]
    expected = int(np.prod(shape)) * dtype.itemsize
    payload_path = os.path.join(os.path.dirname(base) or ".",
                                header.get("payload",
                                           os.path.basename(base) + ".raw"))
    with open(payload_path, "rb") as f:
        raw = f.read()
    if len(raw) != expected:
        raise CorruptFileError(
            f"{payload_path}: expected {expected} bytes, found {len(raw)}")
    array = np.frombuffer(raw, dtype=dtype).reshape(shape)
    return VolumeData(
        array=array.copy(),
        kind=kind,
        spacing_mm=tuple(header.get("spacing_mm", (1.0, 1.0, 1.0))),
        class_names=header.get("class_names"),
        meta=header.get("meta", {}),
    )
