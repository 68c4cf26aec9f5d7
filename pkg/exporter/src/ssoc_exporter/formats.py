"""Writers for the engine's on-disk formats (little-endian).

Embedding file: magic ``SSOCEMB1`` | u32 rows | u32 dim | u8 views (1|2) |
float32 payload. Label sidecar: ``SSOCLAB1`` | u32 count | int64 labels.
The exporter produces these files directly; the binary layout is the
integration contract with the training engine.
"""

from __future__ import annotations

import struct

import numpy as np

EMB_MAGIC = b"SSOCEMB1"
LAB_MAGIC = b"SSOCLAB1"


def write_embeddings(path, view1: np.ndarray, view2: np.ndarray | None = None) -> None:
    view1 = np.asarray(view1, dtype=np.float64)
    if view1.ndim != 2:
        raise ValueError("embeddings must be a 2-D array")
    views = 1 if view2 is None else 2
    if views == 2:
        view2 = np.asarray(view2, dtype=np.float64)
        if view2.shape != view1.shape:
            raise ValueError("second views must match first views")
    rows, dim = view1.shape
    with open(path, "wb") as fh:
        fh.write(EMB_MAGIC)
        fh.write(struct.pack("<IIB", rows, dim, views))
        payload = view1 if views == 1 else np.concatenate([view1, view2], axis=1)
        fh.write(payload.astype("<f4").tobytes(order="C"))


def write_labels(path, labels) -> None:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim != 1:
        raise ValueError("labels must be a 1-D array")
    with open(path, "wb") as fh:
        fh.write(LAB_MAGIC)
        fh.write(struct.pack("<I", labels.shape[0]))
        fh.write(labels.astype("<i8").tobytes(order="C"))
