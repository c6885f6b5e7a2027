"""Writer for the EMB1 embedding file format.

Layout (little-endian): a 16-byte header `<4sBBHII` — magic "EMB1",
version u8 = 1, flags u8 (bit 0: labels present), reserved u16, N u32,
d u32 — followed by the N x d float32 feature matrix row-major and, when
flagged, N int32 labels. This is the exchange format the discovery
pipeline reads; the exporter owns its own writer so the two packages stay
decoupled.
"""

import struct

import numpy as np

_HEADER = struct.Struct("<4sBBHII")
MAGIC = b"EMB1"
VERSION = 1


def write_emb1(features: np.ndarray, labels: np.ndarray | None, path) -> None:
    """Write features (N x d, stored float32) and optional int32 labels."""
    features = np.asarray(features)
    if features.ndim != 2:
        raise ValueError("features must be a 2-D matrix")
    n, d = features.shape
    if labels is not None:
        labels = np.asarray(labels)
        if labels.shape != (n,):
            raise ValueError("labels must be one per feature row")
    flags = 0 if labels is None else 1
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, flags, 0, n, d))
        fh.write(np.ascontiguousarray(features, dtype="<f4").tobytes())
        if labels is not None:
            fh.write(labels.astype("<i4").tobytes())
