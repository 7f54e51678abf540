"""Versioned binary weight container.

Layout: ``b"SMW1"``, a little-endian uint64 header length, a UTF-8 JSON
header, then the raw little-endian tensor bytes back to back. The header
records the kernel offset-ordering version so weights trained under one
ordering are never silently loaded under another.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Mapping, Optional

import numpy as np

from sparsemos.sparse.kernel import OFFSET_ORDER_VERSION

MAGIC = b"SMW1"
FORMAT_VERSION = 1
_DTYPES = {"float32": "<f4", "float64": "<f8", "int64": "<i8"}


class WeightFormatError(ValueError):
    """Raised for corrupt, truncated or incompatible weight files."""


def save_weights(path: str | Path, tensors: Mapping[str, np.ndarray], meta: Optional[dict[str, Any]] = None) -> None:
    entries = []
    blobs = []
    offset = 0
    for name in sorted(tensors):
        arr = np.asarray(tensors[name])
        dtype = arr.dtype.name
        if dtype not in _DTYPES:
            raise WeightFormatError(f"tensor {name}: unsupported dtype {dtype}")
        raw = np.ascontiguousarray(arr, dtype=_DTYPES[dtype]).tobytes()
        entries.append({"name": name, "dtype": dtype, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = {
        "format": "sparsemos-weights",
        "version": FORMAT_VERSION,
        "offset_order": OFFSET_ORDER_VERSION,
        "tensors": entries,
        "meta": meta or {},
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(len(head).to_bytes(8, "little"))
        f.write(head)
        for raw in blobs:
            f.write(raw)


def load_weights(path: str | Path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    """Return ``(tensors, meta)``; raises :class:`WeightFormatError` on any mismatch."""
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise WeightFormatError(f"{path}: not a weight file (bad magic)")
    if len(data) < 12:
        raise WeightFormatError(f"{path}: truncated header")
    n = int.from_bytes(data[4:12], "little")
    try:
        header = json.loads(data[12 : 12 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise WeightFormatError(f"{path}: unreadable header ({exc})") from exc
    if header.get("version") != FORMAT_VERSION:
        raise WeightFormatError(f"{path}: format version {header.get('version')} is not supported")
    if header.get("offset_order") != OFFSET_ORDER_VERSION:
        raise WeightFormatError(
            f"{path}: kernel offset ordering {header.get('offset_order')} does not match this build ({OFFSET_ORDER_VERSION})"
        )
    body = memoryview(data)[12 + n :]
    tensors = {}
    for e in header["tensors"]:
        end = e["offset"] + e["nbytes"]
        if end > len(body):
            raise WeightFormatError(f"{path}: tensor {e['name']} is truncated")
        if e["dtype"] not in _DTYPES:
            raise WeightFormatError(f"{path}: tensor {e['name']} has unsupported dtype {e['dtype']}")
        arr = np.frombuffer(body[e["offset"] : end], dtype=_DTYPES[e["dtype"]])
        tensors[e["name"]] = arr.astype(e["dtype"]).reshape(e["shape"])
    return tensors, header.get("meta", {})
