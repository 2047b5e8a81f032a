"""Bit-exact on-disk persistence.

TensorArchive layout (all integers little-endian):
    magic   4 bytes  b"DGMR"
    version u32      1
    count   u32      number of entries
    entry*  name_len u16, name utf-8, rank u8, dims u64*rank, payload f32 LE
    crc32   u32      over every preceding byte

CurveLog is a CSV with header `epoch,split,loss,term`, flushed per append so a
crash loses at most the in-flight epoch.
"""

from __future__ import annotations

import io
import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

MAGIC = b"DGMR"
VERSION = 1
META_ENTRY = "__meta__"
COND_ENTRY = "__cond__"
VECTORS_ENTRY = "__vectors__"

CURVE_HEADER = "epoch,split,loss,term"
CURVE_SPLITS = ("train", "val")
CURVE_TERMS = ("total", "reconstruction", "kl_z", "kl_y", "kl_w", "ce")


class ArchiveError(IOError):
    """Malformed or corrupted archive file."""


def save_archive(tensors: Dict[str, np.ndarray], path) -> None:
    names = list(tensors)
    if len(set(names)) != len(names):
        raise ArchiveError("duplicate tensor names")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(names)))
    for name in names:
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise ArchiveError(f"name too long: {name[:40]}...")
        buf.write(struct.pack("<H", len(encoded)))
        buf.write(encoded)
        buf.write(struct.pack("<B", arr.ndim))
        for d in arr.shape:
            buf.write(struct.pack("<Q", d))
        buf.write(arr.tobytes())
    payload = buf.getvalue()
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    tmp = Path(path).with_suffix(Path(path).suffix + ".tmp")
    with open(tmp, "wb") as f:
        f.write(payload)
        f.write(struct.pack("<I", crc))
    tmp.replace(path)


def load_archive(path) -> Dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if len(raw) < 12 + 4:
        raise ArchiveError(f"{path}: truncated archive")
    payload, trailer = raw[:-4], raw[-4:]
    (crc,) = struct.unpack("<I", trailer)
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise ArchiveError(f"{path}: CRC mismatch")
    if payload[:4] != MAGIC:
        raise ArchiveError(f"{path}: bad magic {payload[:4]!r}")
    version, count = struct.unpack("<II", payload[4:12])
    if version != VERSION:
        raise ArchiveError(f"{path}: unknown version {version}")
    out: Dict[str, np.ndarray] = {}
    pos = 12
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", payload, pos)
            pos += 2
            name = payload[pos : pos + name_len].decode("utf-8")
            pos += name_len
            (rank,) = struct.unpack_from("<B", payload, pos)
            pos += 1
            dims = struct.unpack_from(f"<{rank}Q", payload, pos) if rank else ()
            pos += 8 * rank
            n = int(np.prod(dims)) if rank else 1
            nbytes = 4 * n
            if pos + nbytes > len(payload):
                raise ArchiveError(f"{path}: truncated payload for {name!r}")
            arr = np.frombuffer(payload, dtype="<f4", count=n, offset=pos).reshape(dims)
            pos += nbytes
            if name in out:
                raise ArchiveError(f"{path}: duplicate entry {name!r}")
            out[name] = arr.copy()
    except struct.error as e:
        raise ArchiveError(f"{path}: truncated archive ({e})") from None
    if pos != len(payload):
        raise ArchiveError(f"{path}: {len(payload) - pos} trailing bytes")
    return out


# -- hidden-state datasets ---------------------------------------------------

def _bytes_to_f32(data: bytes) -> np.ndarray:
    return np.frombuffer(data, dtype=np.uint8).astype("<f4")


def _f32_to_bytes(arr: np.ndarray) -> bytes:
    return arr.astype(np.uint8).tobytes()


def dump_hidden(ds, path) -> None:
    """Persist a HiddenStateDataset (duck-typed: vectors, cond, meta)."""
    entries = {VECTORS_ENTRY: np.asarray(ds.vectors, dtype=np.float32)}
    if getattr(ds, "cond", None) is not None:
        cond = np.asarray(ds.cond, dtype=np.float32)
        if cond.shape[0] != entries[VECTORS_ENTRY].shape[0]:
            raise ArchiveError("conditioning rows differ from vector rows")
        entries[COND_ENTRY] = cond
    meta = dict(ds.meta)
    meta["count"] = int(entries[VECTORS_ENTRY].shape[0])
    meta["dim"] = int(entries[VECTORS_ENTRY].shape[1])
    entries[META_ENTRY] = _bytes_to_f32(json.dumps(meta, sort_keys=True).encode("utf-8"))
    save_archive(entries, path)


def load_hidden(path):
    from .splice import HiddenStateDataset  # local import: splice builds on this module

    entries = load_archive(path)
    if META_ENTRY not in entries or VECTORS_ENTRY not in entries:
        raise ArchiveError(f"{path}: not a hidden-state dump (missing reserved entries)")
    meta = json.loads(_f32_to_bytes(entries[META_ENTRY]).decode("utf-8"))
    vectors = entries[VECTORS_ENTRY]
    cond = entries.get(COND_ENTRY)
    if meta.get("count") != vectors.shape[0]:
        raise ArchiveError(f"{path}: metadata count {meta.get('count')} != stored rows {vectors.shape[0]}")
    return HiddenStateDataset(vectors=vectors, cond=cond, meta=meta)


# -- loss curves ---------------------------------------------------------------

@dataclass
class CurveLog:
    path: Path
    _last_epoch: Dict[Tuple[str, str], int] = field(default_factory=dict)
    _handle: Optional[object] = None

    def __post_init__(self):
        self.path = Path(self.path)
        self._handle = open(self.path, "w", encoding="utf-8", newline="\n")
        self._handle.write(CURVE_HEADER + "\n")
        self._handle.flush()

    def append(self, epoch: int, split: str, term: str, loss: float) -> None:
        if split not in CURVE_SPLITS:
            raise ValueError(f"split must be one of {CURVE_SPLITS}")
        if term not in CURVE_TERMS:
            raise ValueError(f"term must be one of {CURVE_TERMS}")
        key = (split, term)
        expected = self._last_epoch.get(key, -1) + 1
        if epoch != expected:
            raise ValueError(f"out-of-order epoch {epoch} for {key}, expected {expected}")
        self._last_epoch[key] = epoch
        self._handle.write(f"{epoch},{split},{loss!r},{term}\n")
        self._handle.flush()

    def close(self) -> None:
        if self._handle is not None:
            self._handle.close()
            self._handle = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_curves(path) -> List[dict]:
    rows = []
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().strip()
        if header != CURVE_HEADER:
            raise ValueError(f"bad curve header {header!r}")
        for line in f:
            line = line.strip()
            if not line:
                continue
            epoch, split, loss, term = line.split(",")
            rows.append({"epoch": int(epoch), "split": split, "loss": float(loss), "term": term})
    return rows


def curve_series(rows: List[dict], split: str, term: str) -> List[float]:
    return [r["loss"] for r in rows if r["split"] == split and r["term"] == term]
