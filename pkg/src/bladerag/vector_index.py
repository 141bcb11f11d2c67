"""Exact (brute-force) L2 nearest-neighbour index.

File format, all little-endian::

    magic  b"FL2I"        4 bytes
    version               u32
    dim                   u32
    count                 u32
    count x (u32 length, utf-8 id bytes)
    count x dim float32   vectors, row-major, insertion order
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionMismatchError, VectorIndexError

MAGIC = b"FL2I"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIII")
_LEN = struct.Struct("<I")


@dataclass(frozen=True)
class SearchHit:
    id: str
    distance: float


def l2_distance(x, y) -> float:
    a = np.asarray(x, dtype=np.float64)
    b = np.asarray(y, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatchError(a.shape[-1], b.shape[-1])
    d = a - b
    return float(np.sqrt(np.dot(d, d)))


class FlatIndex:
    """Insertion-ordered store of (id, float32 vector) with exact top-k search.

    Equal distances are returned in insertion order.
    """

    def __init__(self, dim: int):
        if dim < 1:
            raise VectorIndexError(f"dimension must be positive, got {dim}")
        self.dim = dim
        self._ids: list[str] = []
        self._positions: dict[str, int] = {}
        self._rows: list[np.ndarray] = []
        self._matrix: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self._ids)

    @property
    def ids(self) -> list[str]:
        return list(self._ids)

    def vector(self, item_id: str) -> np.ndarray:
        return self._rows[self._positions[item_id]].copy()

    def insert(self, item_id: str, vector) -> None:
        v = np.asarray(vector, dtype=np.float32)
        if v.ndim != 1 or v.shape[0] != self.dim:
            raise DimensionMismatchError(self.dim, v.shape[-1] if v.ndim else 0)
        if item_id in self._positions:
            raise VectorIndexError(f"duplicate id in index: {item_id!r}")
        self._positions[item_id] = len(self._ids)
        self._ids.append(item_id)
        self._rows.append(v.copy())
        self._matrix = None

    def _as_matrix(self) -> np.ndarray:
        if self._matrix is None:
            self._matrix = (
                np.vstack(self._rows) if self._rows else np.empty((0, self.dim), dtype=np.float32)
            )
        return self._matrix

    def search(self, query, k: int) -> list[SearchHit]:
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        q = np.asarray(query, dtype=np.float64)
        if q.ndim != 1 or q.shape[0] != self.dim:
            raise DimensionMismatchError(self.dim, q.shape[-1] if q.ndim else 0)
        if not self._ids:
            return []
        diff = self._as_matrix().astype(np.float64) - q
        dist = np.sqrt(np.einsum("ij,ij->i", diff, diff))
        order = np.argsort(dist, kind="stable")[:k]
        return [SearchHit(self._ids[i], float(dist[i])) for i in order]

    def to_bytes(self) -> bytes:
        parts = [_HEADER.pack(MAGIC, FORMAT_VERSION, self.dim, len(self._ids))]
        for item_id in self._ids:
            raw = item_id.encode("utf-8")
            parts.append(_LEN.pack(len(raw)))
            parts.append(raw)
        parts.append(self._as_matrix().astype("<f4", copy=False).tobytes(order="C"))
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes, expected_dim: int | None = None) -> "FlatIndex":
        if len(data) < _HEADER.size:
            raise VectorIndexError("corrupt index: truncated header")
        magic, version, dim, count = _HEADER.unpack_from(data, 0)
        if magic != MAGIC:
            raise VectorIndexError(f"corrupt index: bad magic {magic!r}")
        if version != FORMAT_VERSION:
            raise VectorIndexError(f"unsupported index format version {version}")
        if expected_dim is not None and dim != expected_dim:
            raise DimensionMismatchError(expected_dim, dim)
        offset = _HEADER.size
        ids = []
        try:
            for _ in range(count):
                (n,) = _LEN.unpack_from(data, offset)
                offset += _LEN.size
                if offset + n > len(data):
                    raise VectorIndexError("corrupt index: truncated id")
                ids.append(data[offset : offset + n].decode("utf-8"))
                offset += n
        except (struct.error, UnicodeDecodeError) as exc:
            raise VectorIndexError(f"corrupt index: {exc}") from exc
        expected_bytes = count * dim * 4
        if len(data) - offset != expected_bytes:
            raise VectorIndexError(
                f"corrupt index: expected {expected_bytes} vector bytes, found {len(data) - offset}"
            )
        matrix = np.frombuffer(data, dtype="<f4", offset=offset).reshape(count, dim)
        index = cls(dim)
        for item_id, row in zip(ids, matrix):
            index.insert(item_id, row.astype(np.float32))
        return index

    def persist(self, path: str | Path) -> None:
        try:
            Path(path).write_bytes(self.to_bytes())
        except OSError as exc:
            raise VectorIndexError(f"cannot write index {path}: {exc}") from exc

    @classmethod
    def load(cls, path: str | Path, expected_dim: int | None = None) -> "FlatIndex":
        try:
            data = Path(path).read_bytes()
        except OSError as exc:
            raise VectorIndexError(f"cannot read index {path}: {exc}") from exc
        return cls.from_bytes(data, expected_dim)
