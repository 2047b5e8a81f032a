"""IDX image/label files: 4-byte magic (0, 0, dtype, ndim), big-endian u32
dims, raw payload. Only u8 payloads are needed here."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

_DTYPE_U8 = 0x08


class IdxError(IOError):
    pass


def write_idx(arr: np.ndarray, path) -> None:
    arr = np.asarray(arr)
    if arr.dtype != np.uint8:
        raise IdxError("only u8 IDX payloads are supported")
    with open(path, "wb") as f:
        f.write(struct.pack(">BBBB", 0, 0, _DTYPE_U8, arr.ndim))
        for d in arr.shape:
            f.write(struct.pack(">I", d))
        f.write(arr.tobytes())


def read_idx(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise IdxError(f"{path}: truncated IDX header")
    zero0, zero1, dtype, ndim = struct.unpack_from(">BBBB", raw, 0)
    if zero0 != 0 or zero1 != 0 or dtype != _DTYPE_U8:
        raise IdxError(f"{path}: unsupported IDX magic {raw[:4]!r}")
    dims = struct.unpack_from(f">{ndim}I", raw, 4)
    offset = 4 + 4 * ndim
    n = int(np.prod(dims))
    if len(raw) - offset != n:
        raise IdxError(f"{path}: payload size {len(raw) - offset} != {n}")
    return np.frombuffer(raw, dtype=np.uint8, count=n, offset=offset).reshape(dims).copy()


def normalize_images(images_u8: np.ndarray) -> np.ndarray:
    """Flatten and normalize to mean/var 0.5 convention: (x/255 - 0.5) / 0.5."""
    flat = images_u8.reshape(images_u8.shape[0], -1).astype(np.float32)
    return (flat / 255.0 - 0.5) / 0.5
