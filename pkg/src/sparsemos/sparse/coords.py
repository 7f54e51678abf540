"""Integer 4D coordinate hashing.

Coordinates ``(t, x, y, z)`` are packed into one int64 key, 16 bits per
axis with a bias of 2**15. Key order equals lexicographic coordinate order,
so sorting keys sorts coordinates time-major.
"""

from __future__ import annotations

import numpy as np

BITS = 16
BIAS = 1 << (BITS - 1)
# headroom so that coordinate + kernel offset never leaves the packed range
LIMIT = BIAS - 64
_MASK = (1 << BITS) - 1


def encode(coords: np.ndarray) -> np.ndarray:
    c = np.asarray(coords, dtype=np.int64).reshape(-1, 4)
    if c.size and (c.min() < -LIMIT or c.max() >= LIMIT):
        raise OverflowError(f"coordinates must lie in [{-LIMIT}, {LIMIT}); got [{c.min()}, {c.max()}]")
    b = c + BIAS
    return ((b[:, 0] << 48) | (b[:, 1] << 32) | (b[:, 2] << 16) | b[:, 3]) ^ np.int64(-(1 << 63))


def decode(keys: np.ndarray) -> np.ndarray:
    k = np.asarray(keys, dtype=np.int64) ^ np.int64(-(1 << 63))
    out = np.empty((k.shape[0], 4), dtype=np.int64)
    out[:, 0] = (k >> 48) & _MASK
    out[:, 1] = (k >> 32) & _MASK
    out[:, 2] = (k >> 16) & _MASK
    out[:, 3] = k & _MASK
    return out - BIAS


def unique_coords(coords: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Deduplicate coordinates into canonical order.

    Returns ``(unique, inverse)`` where ``unique[inverse] == coords``.
    """
    keys = encode(coords)
    ukeys, inverse = np.unique(keys, return_inverse=True)
    return decode(ukeys), inverse.reshape(-1)


class CoordIndex:
    """Hash index from coordinates to row positions, backed by sorted keys."""

    def __init__(self, coords: np.ndarray):
        keys = encode(coords)
        self._order = np.argsort(keys, kind="stable")
        self._sorted = keys[self._order]
        if self._sorted.size > 1 and np.any(self._sorted[1:] == self._sorted[:-1]):
            raise ValueError("coordinates must be unique")
        self.size = keys.shape[0]

    def lookup_keys(self, qk: np.ndarray) -> np.ndarray:
        """Row index for each packed key, or -1 when absent."""
        if self.size == 0:
            return np.full(qk.shape[0], -1, dtype=np.int64)
        pos = np.searchsorted(self._sorted, qk)
        np.minimum(pos, self.size - 1, out=pos)
        return np.where(self._sorted[pos] == qk, self._order[pos], -1)

    def lookup(self, query: np.ndarray) -> np.ndarray:
        """Row index of each query coordinate, or -1 when absent."""
        q = np.asarray(query, dtype=np.int64).reshape(-1, 4)
        if self.size == 0 or q.shape[0] == 0:
            return np.full(q.shape[0], -1, dtype=np.int64)
        inside = np.all((q >= -LIMIT) & (q < LIMIT), axis=1)
        out = np.full(q.shape[0], -1, dtype=np.int64)
        if not inside.any():
            return out
        qk = encode(q[inside])
        pos = np.searchsorted(self._sorted, qk)
        pos_c = np.minimum(pos, self.size - 1)
        hit = self._sorted[pos_c] == qk
        res = np.where(hit, self._order[pos_c], -1)
        out[inside] = res
        return out


def offset_key(offset: np.ndarray) -> np.int64:
    """Key increment for a coordinate shift; ``encode(c + d) == encode(c) + offset_key(d)``."""
    d = np.asarray(offset, dtype=np.int64).reshape(4)
    with np.errstate(over="ignore"):
        return np.int64((d[0] << 48) + (d[1] << 32) + (d[2] << 16) + d[3])
