"""Weight manifests: one raw little-endian ``.bin`` per array plus an ``index.json``."""

from __future__ import annotations

import hashlib
import json
import re
from pathlib import Path
from typing import Mapping

import numpy as np


def _file_name(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "_", name) + ".bin"


def save_weights(directory, weights: Mapping[str, object]) -> Path:
    """Write every array (numpy or anything with ``.data``) and the index; returns the index path."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    index = []
    for name in sorted(weights):
        arr = np.asarray(getattr(weights[name], "data", weights[name]))
        raw = np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes()
        fname = _file_name(name)
        (out / fname).write_bytes(raw)
        index.append({"name": name, "file": fname, "shape": list(arr.shape), "dtype": arr.dtype.name,
                      "sha256": hashlib.sha256(raw).hexdigest()})
    path = out / "index.json"
    path.write_text(json.dumps(index, indent=1, sort_keys=True) + "\n")
    return path


def load_weights(directory, verify: bool = True) -> dict[str, np.ndarray]:
    root = Path(directory)
    index = json.loads((root / "index.json").read_text())
    out = {}
    for e in index:
        raw = (root / e["file"]).read_bytes()
        if verify and hashlib.sha256(raw).hexdigest() != e["sha256"]:
            raise ValueError(f"checksum mismatch for {e['name']}")
        arr = np.frombuffer(raw, dtype=np.dtype(e["dtype"]).newbyteorder("<"))
        out[e["name"]] = arr.reshape(e["shape"]).astype(e["dtype"])
    return out
