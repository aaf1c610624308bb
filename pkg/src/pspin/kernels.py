"""Kernel backend selection and compositions built on the two primitives.

The hot operations of the whole package reduce to two kernels over length-2^n
arrays indexed by spin words (bit i set means sigma_i = -1):

* fwht_inplace: batched Walsh-Hadamard transform.  The energy table of a
  Hamiltonian is the transform of its subset-coefficient vector, and the
  transform also diagonalizes XOR-correlation.
* popcount_bins: row sums grouped by Hamming weight, which turns an
  XOR-correlation into an exact overlap histogram.

The compiled extension (pspin._fastcore) is preferred; the numpy fallback
(pspin._corepy) is selected when the extension is missing or when the
environment variable PSPIN_PURE_PYTHON=1 is set.
"""
from __future__ import annotations

import os

import numpy as np

if os.environ.get("PSPIN_PURE_PYTHON", "") == "1":
    from . import _corepy as _impl

    BACKEND = "numpy"
else:
    try:
        from . import _fastcore as _impl

        BACKEND = "cython"
    except ImportError:  # extension not built
        from . import _corepy as _impl

        BACKEND = "numpy"


def backend_name() -> str:
    return BACKEND


def fwht(a: np.ndarray) -> np.ndarray:
    """Walsh-Hadamard transform along the last axis (returns a new array).

    out[..., x] = sum_S (-1)^popcount(x & S) a[..., S].
    Self-inverse up to the factor a.shape[-1].
    """
    a = np.ascontiguousarray(a, dtype=np.float64)
    flat = a.reshape(-1, a.shape[-1]).copy()
    _impl.fwht_inplace(flat)
    return flat.reshape(a.shape)


def popcount_hist(c: np.ndarray, nbits: int) -> np.ndarray:
    """Sum the last axis by popcount class; output shape (..., nbits + 1)."""
    c = np.ascontiguousarray(c, dtype=np.float64)
    flat = c.reshape(-1, c.shape[-1])
    out = _impl.popcount_bins(flat, nbits)
    return out.reshape(c.shape[:-1] + (nbits + 1,))


def xor_correlation(w1: np.ndarray, w2: np.ndarray) -> np.ndarray:
    """C[..., d] = sum_x w1[..., x] * w2[..., x ^ d], via the transform."""
    m = w1.shape[-1]
    if w2.shape[-1] != m:
        raise ValueError("size mismatch")
    f = fwht(w1)
    f *= fwht(w2)
    out = fwht(f)
    out /= m
    return out


def overlap_levels(n: int) -> np.ndarray:
    """The n+1 possible overlaps (n - 2k)/n for Hamming distance k = 0..n."""
    k = np.arange(n + 1)
    return (n - 2.0 * k) / n


def overlap_masses(w1: np.ndarray, w2: np.ndarray, n: int) -> np.ndarray:
    """Product-measure mass of each overlap level, by Hamming-distance class.

    w1, w2 are (batched) weight vectors over spin words; output[..., k] is the
    total mass of pairs at Hamming distance k (overlap (n-2k)/n).  Exact up to
    roundoff; tiny negative entries from the transform are clipped to 0.
    """
    c = xor_correlation(w1, w2)
    hist = popcount_hist(c, n)
    np.clip(hist, 0.0, None, out=hist)
    return hist
