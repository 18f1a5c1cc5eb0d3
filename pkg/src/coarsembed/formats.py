"""Embedding files: the ``GEMB`` binary layout and a plain text variant."""

import struct

import numpy as np

GEMB_MAGIC = b"GEMB"
GEMB_VERSION = 1
_HEADER = struct.Struct("<IQI")


def write_gemb(m: np.ndarray, path):
    """``GEMB``, u32 version, u64 rows, u32 dim, then row-major little-endian f32."""
    m = np.asarray(m)
    if m.ndim != 2:
        raise ValueError("embedding must be 2-d")
    with open(path, "wb") as fh:
        fh.write(GEMB_MAGIC)
        fh.write(_HEADER.pack(GEMB_VERSION, m.shape[0], m.shape[1]))
        fh.write(np.ascontiguousarray(m, dtype="<f4").tobytes())


def read_gemb(path) -> np.ndarray:
    with open(path, "rb") as fh:
        if fh.read(4) != GEMB_MAGIC:
            raise ValueError(f"{path}: not a GEMB file")
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise ValueError(f"{path}: truncated header")
        version, rows, dim = _HEADER.unpack(head)
        if version != GEMB_VERSION:
            raise ValueError(f"{path}: unsupported GEMB version {version}")
        data = fh.read()
    if len(data) != rows * dim * 4:
        raise ValueError(f"{path}: expected {rows}x{dim} floats, found {len(data) // 4}")
    return np.frombuffer(data, dtype="<f4").astype(np.float32).reshape(rows, dim)


def write_text(m: np.ndarray, path, ids=None):
    """One line per row: ``v f_0 ... f_{d-1}``; ``ids`` relabels the first column."""
    rows = np.arange(len(m)) if ids is None else np.asarray(ids)
    with open(path, "w") as fh:
        for v, row in zip(rows, m):
            fh.write(f"{v} " + " ".join(f"{x:.8g}" for x in row) + "\n")


def read_text(path):
    """Returns (ids, matrix) from the text format."""
    data = np.loadtxt(path, ndmin=2)
    return data[:, 0].astype(np.int64), data[:, 1:].astype(np.float32)
