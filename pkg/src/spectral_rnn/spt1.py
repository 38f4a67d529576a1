"""SPT1 binary tensor files.

Layout: magic ``b"SPT1"``, u32 order, order x u64 dims, then the f64 payload
little-endian in C order (last mode fastest).
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"SPT1"


def write_tensor(path: str | Path, T: np.ndarray) -> None:
    T = np.ascontiguousarray(np.asarray(T, dtype="<f8"))
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", T.ndim))
        for d in T.shape:
            f.write(struct.pack("<Q", d))
        f.write(T.tobytes(order="C"))


def read_tensor(path: str | Path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise ValueError(f"{path}: not an SPT1 file (magic {magic!r})")
        (order,) = struct.unpack("<I", f.read(4))
        dims = [struct.unpack("<Q", f.read(8))[0] for _ in range(order)]
        count = int(np.prod(dims)) if dims else 1
        data = np.frombuffer(f.read(count * 8), dtype="<f8", count=count)
        if data.size != count:
            raise ValueError(f"{path}: truncated payload")
    return data.reshape(dims).astype(float)
