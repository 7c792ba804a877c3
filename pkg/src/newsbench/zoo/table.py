"""Cached news-representation table and its binary file format.

Layout (little-endian):
    magic   4 bytes  b"NEMB"
    version u16      1
    prov    u8       0 = pretrained_encoder, 1 = plm_direct
    pad     u8
    N       u64
    d       u32
    N rows: u16 id length, utf-8 id bytes, d float32
"""
from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

MAGIC = b"NEMB"
VERSION = 1
PROVENANCES = ("pretrained_encoder", "plm_direct")
_HEADER = struct.Struct("<4sHBBQI")


class TableError(ValueError):
    pass


class EmbeddingTable:
    def __init__(self, news_ids: Sequence[str], vectors: np.ndarray, provenance: str):
        if provenance not in PROVENANCES:
            raise TableError(f"unknown provenance {provenance!r}")
        vectors = np.array(vectors, dtype="<f4", copy=True)
        if vectors.ndim != 2 or vectors.shape[0] != len(news_ids):
            raise TableError(f"expected ({len(news_ids)}, d) vectors, got {vectors.shape}")
        index = {}
        for i, nid in enumerate(news_ids):
            if nid in index:
                raise TableError(f"duplicate news id {nid!r}")
            index[nid] = i
        vectors.flags.writeable = False
        self._ids = tuple(news_ids)
        self._index = index
        self._vectors = vectors
        self.provenance = provenance

    @property
    def news_ids(self) -> tuple[str, ...]:
        return self._ids

    @property
    def vectors(self) -> np.ndarray:
        return self._vectors

    @property
    def d(self) -> int:
        return self._vectors.shape[1]

    def __len__(self):
        return len(self._ids)

    def __contains__(self, news_id: str) -> bool:
        return news_id in self._index

    def lookup(self, news_id: str) -> np.ndarray:
        try:
            return self._vectors[self._index[news_id]]
        except KeyError:
            raise TableError(f"news id {news_id!r} not in table") from None

    def rows_for(self, index: Mapping[str, int], n_rows: int) -> np.ndarray:
        """Matrix aligned to a model's news index; unmapped rows (e.g. UNK) stay zero."""
        out = np.zeros((n_rows, self.d), dtype=np.float32)
        for nid, row in index.items():
            if nid in self._index:
                out[row] = self._vectors[self._index[nid]]
        return out

    def to_bytes(self) -> bytes:
        parts = [_HEADER.pack(MAGIC, VERSION, PROVENANCES.index(self.provenance), 0, len(self), self.d)]
        for nid, vec in zip(self._ids, self._vectors):
            raw = nid.encode("utf-8")
            parts.append(struct.pack("<H", len(raw)))
            parts.append(raw)
            parts.append(vec.tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, buf: bytes) -> "EmbeddingTable":
        magic, version, prov, _, n, d = _HEADER.unpack_from(buf, 0)
        if magic != MAGIC:
            raise TableError("not an embedding table file")
        if version != VERSION:
            raise TableError(f"unsupported table version {version}")
        off = _HEADER.size
        ids, rows = [], []
        for _ in range(n):
            (length,) = struct.unpack_from("<H", buf, off)
            off += 2
            ids.append(buf[off: off + length].decode("utf-8"))
            off += length
            rows.append(np.frombuffer(buf, dtype="<f4", count=d, offset=off))
            off += 4 * d
        vectors = np.stack(rows) if rows else np.zeros((0, d), dtype="<f4")
        return cls(ids, vectors, PROVENANCES[prov])

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "EmbeddingTable":
        return cls.from_bytes(Path(path).read_bytes())
