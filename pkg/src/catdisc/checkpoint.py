"""Checkpoint files: JSON header plus float32 little-endian array payload."""

from __future__ import annotations

import json
import struct

import numpy as np


def save_checkpoint(path, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    header = {
        "meta": meta,
        "arrays": [{"name": k, "shape": list(np.asarray(v).shape)} for k, v in arrays.items()],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for v in arrays.values():
            fh.write(np.ascontiguousarray(v, dtype="<f4").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        (n,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(n).decode())
        arrays = {}
        for spec in header["arrays"]:
            count = int(np.prod(spec["shape"])) if spec["shape"] else 1
            buf = fh.read(4 * count)
            arrays[spec["name"]] = np.frombuffer(buf, dtype="<f4").astype(np.float64).reshape(spec["shape"])
    return header["meta"], arrays
