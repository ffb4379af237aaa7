"""Binary tensor files and parameter checkpoints.

Tensor file layout: magic b"HTA1", u32 little-endian rank, `rank` u32
little-endian extents, then the row-major payload as 32-bit IEEE-754
little-endian floats. Storage is float32 only; everything is promoted back
to float64 on load because all compute runs in 64-bit.

A checkpoint is a directory: one tensor file per named parameter group plus
a manifest.json listing names, shapes and the model config.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"HTA1"


def write_tensor(path, array) -> None:
    a = np.asarray(array, dtype=np.float64)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", a.ndim))
        for n in a.shape:
            f.write(struct.pack("<I", n))
        f.write(a.astype("<f4").tobytes(order="C"))


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
        (rank,) = struct.unpack("<I", f.read(4))
        shape = tuple(struct.unpack("<I", f.read(4))[0] for _ in range(rank))
        count = int(np.prod(shape)) if shape else 1
        payload = f.read(4 * count)
        if len(payload) != 4 * count:
            raise ValueError(f"{path}: truncated payload")
        data = np.frombuffer(payload, dtype="<f4", count=count)
    return data.astype(np.float64).reshape(shape)


def _safe_name(name: str) -> str:
    return name.replace("/", "_").replace(".", "_")


def save_checkpoint(directory, params: dict[str, np.ndarray],
                    config: dict | None = None) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    manifest = {"params": {}, "config": config or {}}
    for name, value in params.items():
        fname = _safe_name(name) + ".hta"
        write_tensor(d / fname, value)
        manifest["params"][name] = {"file": fname, "shape": list(np.shape(value))}
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2))


def load_checkpoint(directory):
    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text())
    params = {}
    for name, entry in manifest["params"].items():
        arr = read_tensor(d / entry["file"])
        if list(arr.shape) != entry["shape"]:
            raise ValueError(f"{name}: shape {list(arr.shape)} != manifest {entry['shape']}")
        params[name] = arr
    return params, manifest.get("config", {})
