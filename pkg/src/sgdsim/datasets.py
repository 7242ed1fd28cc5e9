"""Optional ingestion of external datasets for qualitative demo runs.

Supports the big-endian IDX container (magic 0x00000803 for ubyte image
tensors, 0x00000801 for ubyte label vectors) and labeled CSV files with a
header row, features in all-but-last columns and the label in the last.
"""

from __future__ import annotations

import csv
import struct

import numpy as np

__all__ = ["load_idx", "load_labeled_csv", "binary_subset"]

_IDX_MAGICS = {0x00000803: 3, 0x00000801: 1}


def load_idx(path) -> np.ndarray:
    """Read an IDX file into a numpy array of uint8.

    The header is big-endian: a 4-byte magic whose last two bytes encode
    the element type (0x08 = unsigned byte) and the number of dimensions,
    followed by one 4-byte big-endian size per dimension.
    """
    with open(path, "rb") as fh:
        magic_bytes = fh.read(4)
        if len(magic_bytes) != 4:
            raise ValueError(f"{path}: truncated IDX header")
        (magic,) = struct.unpack(">I", magic_bytes)
        if magic not in _IDX_MAGICS:
            raise ValueError(
                f"{path}: unsupported IDX magic 0x{magic:08x}; expected 0x00000803 or 0x00000801"
            )
        ndim = _IDX_MAGICS[magic]
        dims = struct.unpack(f">{ndim}I", fh.read(4 * ndim))
        count = int(np.prod(dims))
        data = np.frombuffer(fh.read(count), dtype=np.uint8)
        if data.size != count:
            raise ValueError(f"{path}: expected {count} bytes of payload, got {data.size}")
    return data.reshape(dims)


def load_labeled_csv(path):
    """Read a labeled CSV (header row, label in the last column) into
    (features, labels) float arrays."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if len(header) < 2:
            raise ValueError(f"{path}: need at least one feature column and a label column")
        rows = [[float(cell) for cell in row] for row in reader if row]
    if not rows:
        raise ValueError(f"{path}: no data rows")
    data = np.array(rows)
    return data[:, :-1], data[:, -1]


def binary_subset(features: np.ndarray, labels: np.ndarray, positive, negative):
    """Filter a multi-class dataset down to two classes with +/-1 labels,
    flattening any image tensors to feature vectors."""
    labels = np.asarray(labels)
    mask = (labels == positive) | (labels == negative)
    x = np.asarray(features, dtype=float)[mask]
    x = x.reshape(x.shape[0], -1)
    y = np.where(labels[mask] == positive, 1.0, -1.0)
    return x, y
