"""Hash-indexed sparse voxel storage shared by all map backends."""

from __future__ import annotations

import numpy as np

from ._validation import RejectedInputError, check_positive

_BITS = 21
_OFFSET = 1 << (_BITS - 1)
_MASK = (1 << _BITS) - 1


def pack_keys(keys: np.ndarray) -> np.ndarray:
    """Pack (N, 3) signed cell keys into sortable int64 codes."""
    keys = np.asarray(keys, dtype=np.int64).reshape(-1, 3)
    if keys.size and (keys.min() < -_OFFSET or keys.max() >= _OFFSET):
        raise RejectedInputError("cell key outside the representable range of +-2^20")
    s = keys + _OFFSET
    return (s[:, 0] << (2 * _BITS)) | (s[:, 1] << _BITS) | s[:, 2]


def unpack_keys(codes: np.ndarray) -> np.ndarray:
    codes = np.asarray(codes, dtype=np.int64)
    out = np.empty((codes.size, 3), np.int64)
    out[:, 0] = (codes >> (2 * _BITS)) & _MASK
    out[:, 1] = (codes >> _BITS) & _MASK
    out[:, 2] = codes & _MASK
    return out - _OFFSET


class SparseGrid:
    """Voxels keyed by integer cell coordinates, stored column-wise.

    ``fields`` maps a name to ``(trailing_shape, dtype, fill)``; every voxel
    owns one row in each field array. Rows are never removed.
    """

    def __init__(self, cell_size: float, fields: dict[str, tuple[tuple, type, float]]):
        self.cell_size = check_positive(cell_size, "cell_size")
        self._specs = dict(fields)
        self._index: dict[int, int] = {}
        self._codes = np.empty(0, np.int64)
        self._n = 0
        self._data = {
            name: np.full((0, *shape), fill, dtype=dtype)
            for name, (shape, dtype, fill) in self._specs.items()
        }

    def __len__(self) -> int:
        return self._n

    def __contains__(self, key) -> bool:
        return int(pack_keys(np.asarray(key))[0]) in self._index

    def field(self, name: str) -> np.ndarray:
        """Live view of one field over all allocated rows."""
        return self._data[name][: self._n]

    @property
    def codes(self) -> np.ndarray:
        return self._codes[: self._n]

    def keys(self) -> np.ndarray:
        return unpack_keys(self.codes)

    def _grow(self, needed: int) -> None:
        cap = self._codes.shape[0]
        if needed <= cap:
            return
        new_cap = max(needed, 2 * cap, 64)
        codes = np.empty(new_cap, np.int64)
        codes[: self._n] = self._codes[: self._n]
        self._codes = codes
        for name, (shape, dtype, fill) in self._specs.items():
            arr = np.full((new_cap, *shape), fill, dtype=dtype)
            arr[: self._n] = self._data[name][: self._n]
            self._data[name] = arr

    def rows(self, keys, create: bool = False) -> np.ndarray:
        """Row index for each key; -1 for absent keys unless ``create``."""
        codes = pack_keys(keys)
        if codes.size == 0:
            return np.empty(0, np.int64)
        uniq, inverse = np.unique(codes, return_inverse=True)
        get = self._index.get
        found = np.fromiter((get(c, -1) for c in uniq.tolist()), np.int64, uniq.size)
        if create:
            missing = np.flatnonzero(found < 0)
            if missing.size:
                start = self._n
                self._grow(start + missing.size)
                new_rows = np.arange(start, start + missing.size)
                self._codes[new_rows] = uniq[missing]
                self._index.update(zip(uniq[missing].tolist(), new_rows.tolist()))
                self._n += missing.size
                found[missing] = new_rows
        return found[inverse.reshape(-1)]

    def row(self, key) -> int:
        return int(self._index.get(int(pack_keys(np.asarray(key))[0]), -1))

    def sorted_rows(self) -> np.ndarray:
        """Rows ordered lexicographically by (i, j, k)."""
        return np.argsort(self.codes, kind="stable")

    def bounds(self) -> tuple[np.ndarray, np.ndarray] | None:
        """Inclusive min and max key over all voxels, or None when empty."""
        if self._n == 0:
            return None
        k = self.keys()
        return k.min(axis=0), k.max(axis=0)

    def dense_rows(self, pad: int = 0) -> tuple[np.ndarray, np.ndarray]:
        """Dense int32 volume of row indices (-1 = absent) over the bounding box."""
        b = self.bounds()
        if b is None:
            return np.full((1, 1, 1), -1, np.int32), np.zeros(3, np.int64)
        lo, hi = b[0] - pad, b[1] + pad
        vol = np.full(tuple(hi - lo + 1), -1, np.int32)
        local = self.keys() - lo
        vol[local[:, 0], local[:, 1], local[:, 2]] = np.arange(self._n, dtype=np.int32)
        return vol, lo

    def copy(self) -> SparseGrid:
        other = SparseGrid(self.cell_size, self._specs)
        other._grow(self._n)
        other._n = self._n
        other._codes[: self._n] = self.codes
        other._index = dict(self._index)
        for name in self._specs:
            other._data[name][: self._n] = self.field(name)
        return other
