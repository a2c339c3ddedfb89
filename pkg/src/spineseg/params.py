"""Deterministic traversal of parameter trees.

Parameter containers are plain dataclasses whose fields are Tensors, nested
containers, lists, or dicts.  Traversal order follows dataclass field
declaration (and sorted keys for dicts), so two builds of the same
architecture enumerate identical dotted names.
"""

from __future__ import annotations

import dataclasses
from typing import Iterator

from .tensor import Tensor


def named_parameters(obj, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
    if obj is None:
        return
    if isinstance(obj, Tensor):
        yield prefix or "param", obj
        return
    if dataclasses.is_dataclass(obj):
        for f in dataclasses.fields(obj):
            name = f"{prefix}.{f.name}" if prefix else f.name
            yield from named_parameters(getattr(obj, f.name), name)
        return
    if isinstance(obj, (list, tuple)):
        for i, item in enumerate(obj):
            name = f"{prefix}.{i}" if prefix else str(i)
            yield from named_parameters(item, name)
        return
    if isinstance(obj, dict):
        for key in sorted(obj, key=str):
            name = f"{prefix}.{key}" if prefix else str(key)
            yield from named_parameters(obj[key], name)
        return
    # scalars, flags, config values: not parameters


def parameters(obj) -> list[Tensor]:
    return [t for _, t in named_parameters(obj)]


def parameter_manifest(obj) -> list[tuple[str, tuple[int, ...], str]]:
    """(name, shape, dtype) triples in traversal order."""
    return [(name, t.shape, str(t.dtype)) for name, t in named_parameters(obj)]


def parameter_count(obj) -> int:
    return sum(t.size for t in parameters(obj))


def zero_grads(obj) -> None:
    for t in parameters(obj):
        t.grad = None
