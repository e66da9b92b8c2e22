"""Checkpoint format: a JSON manifest plus one little-endian binary blob.

Round-trips are bit-exact. The manifest lists (name, shape, dtype, offset)
per entry; arbitrary JSON metadata rides along under "extra".
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

_DTYPE_TAGS = {"float32": "<f4", "float64": "<f8"}


def save_checkpoint(path, arrays: dict, extra: dict | None = None) -> None:
    """Write ``path``.json (manifest) and ``path``.bin (flat blob)."""
    path = Path(path)
    entries = []
    blob = bytearray()
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        tag = _DTYPE_TAGS.get(arr.dtype.name)
        if tag is None:
            raise ValueError(f"unsupported dtype {arr.dtype} for '{name}'")
        data = np.ascontiguousarray(arr).astype(tag, copy=False).tobytes()
        entries.append({
            "name": name,
            "shape": list(arr.shape),
            "dtype": arr.dtype.name,
            "offset": len(blob),
            "nbytes": len(data),
        })
        blob.extend(data)
    manifest = {"format": 1, "extra": extra or {}, "entries": entries}
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path.with_suffix(".json"), "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
    with open(path.with_suffix(".bin"), "wb") as f:
        f.write(bytes(blob))


def load_checkpoint(path) -> tuple[dict, dict]:
    """Load arrays and metadata written by ``save_checkpoint``."""
    path = Path(path)
    with open(path.with_suffix(".json")) as f:
        manifest = json.load(f)
    blob = path.with_suffix(".bin").read_bytes()
    arrays = {}
    for e in manifest["entries"]:
        raw = blob[e["offset"]:e["offset"] + e["nbytes"]]
        arr = np.frombuffer(raw, dtype=_DTYPE_TAGS[e["dtype"]]).astype(e["dtype"])
        arrays[e["name"]] = arr.reshape(e["shape"])
    return arrays, manifest["extra"]
