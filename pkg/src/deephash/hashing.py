"""Sign binarization, 64-bit word packing and an exact Hamming index."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import FormatError, ShapeMismatchError

_BIT_WEIGHTS = np.left_shift(np.uint64(1), np.arange(64, dtype=np.uint64))


def words_per_row(nbits: int) -> int:
    return (nbits + 63) // 64


def _tail_mask(nbits: int) -> np.uint64:
    r = nbits % 64
    return np.uint64(0xFFFFFFFFFFFFFFFF) if r == 0 else np.uint64((1 << r) - 1)


@dataclass
class PackedCodes:
    """``n`` sign codes of ``nbits`` bits, stored as an ``(n, words)`` uint64 array."""

    words: np.ndarray
    nbits: int

    def __post_init__(self):
        self.words = np.ascontiguousarray(self.words, dtype=np.uint64)
        if self.nbits < 1:
            raise ValueError(f"nbits must be >= 1, got {self.nbits}")
        if self.words.ndim != 2 or self.words.shape[1] != words_per_row(self.nbits):
            raise FormatError(
                f"words shape {self.words.shape} inconsistent with nbits={self.nbits}"
            )
        if self.words.shape[0] and np.any(self.words[:, -1] & ~_tail_mask(self.nbits)):
            raise FormatError("unused high bits of the last word must be zero")

    @property
    def n(self) -> int:
        return self.words.shape[0]

    def row(self, i: int) -> "PackedCodes":
        return PackedCodes(self.words[i : i + 1], self.nbits)

    def __eq__(self, other):
        if not isinstance(other, PackedCodes):
            return NotImplemented
        return self.nbits == other.nbits and np.array_equal(self.words, other.words)


def binarize(U) -> np.ndarray:
    """Elementwise sign with ``sgn(0) = +1``; returns int8 values in {-1, +1}."""
    U = np.asarray(U)
    return np.where(U >= 0, 1, -1).astype(np.int8)


def pack(signs) -> PackedCodes:
    signs = np.asarray(signs)
    if signs.ndim == 1:
        signs = signs[None, :]
    if signs.ndim != 2 or signs.shape[1] < 1:
        raise ValueError(f"expected a (n, K) sign matrix, got shape {signs.shape}")
    if not np.all((signs == 1) | (signs == -1)):
        raise ValueError("sign codes must contain only -1 and +1")
    n, k = signs.shape
    w = words_per_row(k)
    bits = np.zeros((n, w * 64), dtype=np.uint64)
    bits[:, :k] = signs > 0
    words = (bits.reshape(n, w, 64) * _BIT_WEIGHTS).sum(axis=2, dtype=np.uint64)
    return PackedCodes(words, k)


def unpack(codes: PackedCodes) -> np.ndarray:
    bits = (codes.words[:, :, None] >> np.arange(64, dtype=np.uint64)) & np.uint64(1)
    bits = bits.reshape(codes.n, -1)[:, : codes.nbits]
    return np.where(bits == 1, 1, -1).astype(np.int8)


def hamming(codes: PackedCodes, i: int, j: int) -> int:
    return int(np.bitwise_count(codes.words[i] ^ codes.words[j]).sum())


def theta(codes: PackedCodes, i: int, j: int) -> float:
    """Half inner product of two sign codes, ``K/2 - hamming``."""
    return 0.5 * (codes.nbits - 2 * hamming(codes, i, j))


def hamming_matrix(queries: PackedCodes, db: PackedCodes) -> np.ndarray:
    """All query-to-database Hamming distances, shape ``(nq, ndb)``."""
    if queries.nbits != db.nbits:
        raise ShapeMismatchError(f"nbits mismatch: query {queries.nbits} vs db {db.nbits}")
    out = np.zeros((queries.n, db.n), dtype=np.int32)
    for w in range(db.words.shape[1]):
        out += np.bitwise_count(queries.words[:, w, None] ^ db.words[None, :, w])
    return out


class HammingIndex:
    """Immutable exact-scan index over packed codes.

    Ranking is by ascending Hamming distance with ties broken by ascending
    row id, so results never depend on scan order.
    """

    def __init__(self, codes: PackedCodes, labels):
        labels = np.asarray(labels, dtype=np.int64)
        if labels.shape != (codes.n,):
            raise ShapeMismatchError(f"{labels.size} labels for {codes.n} codes")
        self._codes = PackedCodes(codes.words.copy(), codes.nbits)
        self._codes.words.setflags(write=False)
        self._labels = labels.copy()
        self._labels.setflags(write=False)

    @property
    def codes(self) -> PackedCodes:
        return self._codes

    @property
    def labels(self) -> np.ndarray:
        return self._labels

    @property
    def n(self) -> int:
        return self._codes.n

    @property
    def nbits(self) -> int:
        return self._codes.nbits

    def distances(self, queries: PackedCodes) -> np.ndarray:
        return hamming_matrix(queries, self._codes)

    def search(self, query: PackedCodes, k: int) -> list[tuple[int, int]]:
        """Top-``k`` ``(row_id, distance)`` pairs for a single query code."""
        ids, dists = self.search_batch(query, k)
        return list(zip(ids[0].tolist(), dists[0].tolist()))

    def search_batch(self, queries: PackedCodes, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Top-``k`` ids and distances for every query row, shape ``(nq, min(k, n))``."""
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        kk = min(k, self.n)
        dist = self.distances(queries)
        if kk == 0:
            empty = np.zeros((queries.n, 0), dtype=np.int64)
            return empty, empty.copy()
        # Unique composite key encodes the (distance, row_id) order.
        key = dist.astype(np.int64) * self.n + np.arange(self.n, dtype=np.int64)
        if kk < self.n:
            part = np.argpartition(key, kk - 1, axis=1)[:, :kk]
        else:
            part = np.broadcast_to(np.arange(self.n), key.shape)
        sub = np.take_along_axis(key, part, axis=1)
        order = np.argsort(sub, axis=1)
        ids = np.take_along_axis(part, order, axis=1).astype(np.int64)
        return ids, np.take_along_axis(dist, ids, axis=1).astype(np.int64)

    def rank_all(self, query: PackedCodes) -> np.ndarray:
        """Full ranking of database row ids for one query."""
        d = self.distances(query)[0]
        return np.argsort(d, kind="stable")


def build_index(codes: PackedCodes, labels) -> HammingIndex:
    return HammingIndex(codes, labels)


def search(index: HammingIndex, query_code: PackedCodes, k: int) -> list[tuple[int, int]]:
    if query_code.nbits != index.nbits:
        raise ShapeMismatchError(f"nbits mismatch: query {query_code.nbits} vs index {index.nbits}")
    return index.search(query_code, k)
