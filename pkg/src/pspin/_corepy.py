"""Pure-numpy fallback for the compiled kernels in _fastcore.

Same contracts as the extension module; used when the extension is not built
or when PSPIN_PURE_PYTHON=1 is set (see pspin.kernels).
"""
from __future__ import annotations

import numpy as np

_POPCOUNT_TABLES: dict = {}
_PERM_CACHE: dict = {}


def fwht_inplace(a: np.ndarray) -> None:
    """In-place Walsh-Hadamard transform of each row (length a power of 2)."""
    m = a.shape[-1]
    if m & (m - 1):
        raise ValueError("row length must be a power of 2")
    h = 1
    while h < m:
        b = a.reshape(-1, 2 * h)
        top = b[:, :h]
        bot = b[:, h:]
        diff = top - bot
        top += bot
        bot[:] = diff
        h *= 2


def popcount_table(nbits: int) -> np.ndarray:
    """popcount of 0..2^nbits-1 as an int64 array (cached)."""
    t = _POPCOUNT_TABLES.get(nbits)
    if t is None:
        d = np.arange(1 << nbits, dtype=np.uint64)
        t = np.zeros(1 << nbits, dtype=np.int64)
        while d.any():
            t += (d & 1).astype(np.int64)
            d >>= 1
        _POPCOUNT_TABLES[nbits] = t
    return t


def _perm_starts(nbits: int):
    cached = _PERM_CACHE.get(nbits)
    if cached is None:
        pc = popcount_table(nbits)
        perm = np.argsort(pc, kind="stable")
        starts = np.searchsorted(pc[perm], np.arange(nbits + 1))
        cached = (perm, starts)
        _PERM_CACHE[nbits] = cached
    return cached


def popcount_bins(c: np.ndarray, nbits: int) -> np.ndarray:
    """Row-wise sums of c over popcount classes: out[r, k] = sum_{pc(d)=k} c[r, d]."""
    if c.shape[-1] != (1 << nbits):
        raise ValueError("row length must equal 2**nbits")
    if nbits == 0:
        return c.astype(np.float64, copy=True)
    perm, starts = _perm_starts(nbits)
    return np.add.reduceat(c[:, perm], starts, axis=1)
