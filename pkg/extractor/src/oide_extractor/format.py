"""Writer (and validating reader) for the OIDE embedding file format.

This mirrors the engine's external interface byte for byte: little-endian
magic "OIDE", version u16=1, flags u16=0, dim u32, count u64, count ids as
u64, count*dim float32 payload, CRC-32 of the payload. The sidecar manifest
is UTF-8 text with one "id<TAB>source-path" line per row; lines starting
with '#' carry warnings and are ignored by readers.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

MAGIC = b"OIDE"
VERSION = 1
_HEADER = struct.Struct("<4sHHIQ")


def write_embeddings(path, ids, data) -> None:
    ids = np.ascontiguousarray(ids, dtype="<u8")
    data = np.ascontiguousarray(data, dtype="<f4")
    if data.ndim != 2 or ids.shape[0] != data.shape[0]:
        raise ValueError("need one id per row")
    if not np.all(np.isfinite(data)):
        raise ValueError("embedding payload contains NaN or Inf")
    if np.unique(ids).size != ids.size:
        raise ValueError("ids must be unique")
    payload = data.tobytes()
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, 0, data.shape[1], data.shape[0]))
        fh.write(ids.tobytes())
        fh.write(payload)
        fh.write(struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF))


def read_embeddings(path):
    """Strict reader used for self-validation in tests."""
    blob = Path(path).read_bytes()
    magic, version, flags, dim, count = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC or version != VERSION or flags != 0:
        raise ValueError(f"{path}: not a v{VERSION} embedding file")
    off = _HEADER.size
    ids = np.frombuffer(blob, dtype="<u8", count=count, offset=off)
    off += count * 8
    payload = blob[off:off + count * dim * 4]
    (crc,) = struct.unpack_from("<I", blob, off + len(payload))
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise ValueError(f"{path}: payload CRC mismatch")
    data = np.frombuffer(payload, dtype="<f4").reshape(count, dim)
    return ids.copy(), data.copy()


def write_sidecar(path, entries: dict[int, str], warnings: list[str]) -> None:
    lines = [f"# WARNING {w}" for w in warnings]
    lines += [f"{ident}\t{src}" for ident, src in sorted(entries.items())]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""),
                          encoding="utf-8")
