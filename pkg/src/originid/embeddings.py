"""Core numeric containers and the binary embedding file format.

An embedding file is little-endian throughout:

    magic   "OIDE"          4 bytes
    version u16 = 1
    flags   u16             0 = embedding set, 1 = projection matrix
    dim     u32             columns per row
    count   u64             number of rows
    ids     count * u64
    payload count * dim * f32
    crc32   u32             CRC-32 of the raw payload bytes

A sidecar manifest (optional, UTF-8 text) maps ids back to source paths,
one "id<TAB>path" per line, so the numeric core never carries strings.

Matrix products accumulate in float64 and are stored as float32; this keeps
results reproducible across platforms at the cost of one upcast.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BadMagicError,
    ChecksumMismatchError,
    DegenerateVectorError,
    DimensionMismatchError,
    DuplicateIdError,
    FlagMismatchError,
    FormatError,
    NonFiniteValueError,
    TruncatedPayloadError,
    VersionMismatchError,
)

MAGIC = b"OIDE"
FORMAT_VERSION = 1
FLAG_EMBEDDINGS = 0
FLAG_PROJECTION = 1

# Norms at or below this are treated as degenerate: cosine losses and scores
# all assume unit vectors, so a direction must be recoverable.
EPS_NORM = 1e-8

_HEADER = struct.Struct("<4sHHIQ")


def _as_f32_matrix(data, dim: int | None = None) -> np.ndarray:
    arr = np.ascontiguousarray(data, dtype=np.float32)
    if arr.ndim != 2:
        raise DimensionMismatchError(f"expected a 2-D matrix, got ndim={arr.ndim}")
    if dim is not None and arr.shape[1] != dim:
        raise DimensionMismatchError(f"expected {dim} columns, got {arr.shape[1]}")
    return arr


@dataclass(frozen=True, eq=False)
class EmbeddingSet:
    """Ids plus a dense row-major matrix of float32 vectors, one row per id.

    Immutable after construction; safe to share across threads for reading.
    """

    ids: np.ndarray    # uint64, shape (count,)
    dim: int
    data: np.ndarray   # float32, shape (count, dim)

    def __post_init__(self):
        ids = np.ascontiguousarray(self.ids, dtype=np.uint64)
        data = _as_f32_matrix(self.data)
        if self.dim < 1:
            raise DimensionMismatchError(f"dim must be positive, got {self.dim}")
        if data.shape[1] != self.dim:
            raise DimensionMismatchError(
                f"data has {data.shape[1]} columns but dim={self.dim}")
        if data.shape[0] != ids.shape[0]:
            raise DimensionMismatchError(
                f"{ids.shape[0]} ids but {data.shape[0]} rows")
        if ids.size and np.unique(ids).size != ids.size:
            raise DuplicateIdError("ids are not unique within the set")
        if not np.all(np.isfinite(data)):
            raise NonFiniteValueError("embedding data contains NaN or Inf")
        ids.setflags(write=False)
        data.setflags(write=False)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "data", data)

    def __len__(self) -> int:
        return int(self.ids.shape[0])

    def row_for_id(self, ident: int) -> np.ndarray:
        idx = np.flatnonzero(self.ids == np.uint64(ident))
        if idx.size == 0:
            raise KeyError(f"id {ident} not in set")
        return self.data[idx[0]]

    def __eq__(self, other) -> bool:
        if not isinstance(other, EmbeddingSet):
            return NotImplemented
        return (self.dim == other.dim
                and np.array_equal(self.ids, other.ids)
                and self.data.tobytes() == other.data.tobytes())


@dataclass(frozen=True, eq=False)
class ProjectionMatrix:
    """Learned n-by-m linear map applied on the right of row vectors."""

    n: int
    m: int
    data: np.ndarray   # float32, shape (n, m)

    def __post_init__(self):
        data = _as_f32_matrix(self.data)
        if not (1 <= self.m <= self.n):
            raise DimensionMismatchError(f"rank must satisfy 1 <= m <= n, got n={self.n} m={self.m}")
        if data.shape != (self.n, self.m):
            raise DimensionMismatchError(
                f"data shape {data.shape} does not match (n={self.n}, m={self.m})")
        if not np.all(np.isfinite(data)):
            raise NonFiniteValueError("projection matrix contains NaN or Inf")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @classmethod
    def identity(cls, n: int) -> "ProjectionMatrix":
        return cls(n=n, m=n, data=np.eye(n, dtype=np.float32))


def _write_file(path, flags: int, ids: np.ndarray, data: np.ndarray) -> None:
    payload = np.ascontiguousarray(data, dtype="<f4").tobytes()
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, flags, data.shape[1], data.shape[0]))
        fh.write(np.ascontiguousarray(ids, dtype="<u8").tobytes())
        fh.write(payload)
        fh.write(struct.pack("<I", crc))


def _read_file(path, expected_flags: int) -> tuple[np.ndarray, int, np.ndarray]:
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise TruncatedPayloadError(f"{path}: file shorter than header")
    magic, version, flags, dim, count = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"{path}: version {version}, expected {FORMAT_VERSION}")
    if flags != expected_flags:
        raise FlagMismatchError(f"{path}: flags {flags}, expected {expected_flags}")
    if dim < 1:
        raise FormatError(f"{path}: dim field must be positive")
    ids_bytes = count * 8
    payload_bytes = count * dim * 4
    expected = _HEADER.size + ids_bytes + payload_bytes + 4
    if len(blob) < expected:
        raise TruncatedPayloadError(
            f"{path}: header promises {count} rows of dim {dim} "
            f"({expected} bytes) but file holds {len(blob)}")
    if len(blob) > expected:
        raise FormatError(f"{path}: {len(blob) - expected} trailing bytes after checksum")
    off = _HEADER.size
    ids = np.frombuffer(blob, dtype="<u8", count=count, offset=off).astype(np.uint64)
    off += ids_bytes
    payload = blob[off:off + payload_bytes]
    (crc_stored,) = struct.unpack_from("<I", blob, off + payload_bytes)
    if zlib.crc32(payload) & 0xFFFFFFFF != crc_stored:
        raise ChecksumMismatchError(f"{path}: payload CRC mismatch")
    data = np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(count, dim)
    return ids, dim, data


def save_embeddings(emb: EmbeddingSet, path) -> None:
    """Write a set so that load_embeddings returns a bit-exact equal set."""
    _write_file(path, FLAG_EMBEDDINGS, emb.ids, emb.data)


def load_embeddings(path) -> EmbeddingSet:
    ids, dim, data = _read_file(path, FLAG_EMBEDDINGS)
    return EmbeddingSet(ids=ids, dim=dim, data=data)


def save_projection(w: ProjectionMatrix, path) -> None:
    """Projection matrices reuse the container: one row per input dimension,
    dim field = m, ids 0..n-1, flags = 1."""
    _write_file(path, FLAG_PROJECTION, np.arange(w.n, dtype=np.uint64), w.data)


def load_projection(path) -> ProjectionMatrix:
    ids, m, data = _read_file(path, FLAG_PROJECTION)
    n = data.shape[0]
    if not np.array_equal(ids, np.arange(n, dtype=np.uint64)):
        raise FormatError(f"{path}: projection row ids must be 0..n-1")
    return ProjectionMatrix(n=n, m=m, data=data)


def write_manifest(path, entries: dict[int, str]) -> None:
    lines = [f"{ident}\t{src}" for ident, src in entries.items()]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def read_manifest(path) -> dict[int, str]:
    out: dict[int, str] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line or line.startswith("#"):
            continue
        ident, _, src = line.partition("\t")
        out[int(ident)] = src
    return out


def l2_normalize(v: np.ndarray) -> np.ndarray:
    """Scale a vector to unit norm. Raises DegenerateVectorError near zero."""
    v = np.asarray(v)
    norm = float(np.linalg.norm(v.astype(np.float64)))
    if norm <= EPS_NORM:
        raise DegenerateVectorError(f"vector norm {norm:.3e} below {EPS_NORM}")
    return (v.astype(np.float64) / norm).astype(v.dtype)


def normalize_rows(data: np.ndarray, ids: np.ndarray | None = None) -> np.ndarray:
    """Row-wise unit normalization; names the offending id on degeneracy."""
    d64 = data.astype(np.float64)
    norms = np.linalg.norm(d64, axis=1)
    bad = np.flatnonzero(norms <= EPS_NORM)
    if bad.size:
        which = int(ids[bad[0]]) if ids is not None else int(bad[0])
        raise DegenerateVectorError(
            f"row with id {which} has norm {norms[bad[0]]:.3e} below {EPS_NORM}")
    return (d64 / norms[:, None]).astype(np.float32)


def project(emb: EmbeddingSet, w: ProjectionMatrix, normalize: bool = False) -> EmbeddingSet:
    """Apply the linear map to every row; optionally unit-normalize the output.

    Accumulates in float64 and stores float32.
    """
    if emb.dim != w.n:
        raise DimensionMismatchError(f"set dim {emb.dim} != projection input dim {w.n}")
    out64 = emb.data.astype(np.float64) @ w.data.astype(np.float64)
    if normalize:
        out = normalize_rows(out64, emb.ids)
    else:
        out = out64.astype(np.float32)
    return EmbeddingSet(ids=emb.ids, dim=w.m, data=out)
