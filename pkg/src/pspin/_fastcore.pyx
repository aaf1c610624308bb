# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner kernels: batched Walsh-Hadamard transform and popcount bins.

Both operate on row batches so the Python layer can amortize call overhead
over many disorder replicas at once.
"""
import numpy as np

cimport numpy as cnp

cnp.import_array()

cdef extern from *:
    int __builtin_popcountll(unsigned long long x) nogil


def fwht_inplace(double[:, ::1] a):
    """In-place Walsh-Hadamard transform of each row (row length a power of 2).

    Computes a[r, x] <- sum_S (-1)^popcount(x & S) a[r, S]; self-inverse up to
    a factor of the row length.
    """
    cdef Py_ssize_t rows = a.shape[0]
    cdef Py_ssize_t m = a.shape[1]
    cdef Py_ssize_t r, h, i, j
    cdef double x, y
    if m & (m - 1):
        raise ValueError("row length must be a power of 2")
    with nogil:
        for r in range(rows):
            h = 1
            while h < m:
                i = 0
                while i < m:
                    for j in range(i, i + h):
                        x = a[r, j]
                        y = a[r, j + h]
                        a[r, j] = x + y
                        a[r, j + h] = x - y
                    i += 2 * h
                h *= 2


def popcount_bins(double[:, ::1] c, int nbits):
    """Row-wise sums of c over popcount classes: out[r, k] = sum_{pc(d)=k} c[r, d]."""
    cdef Py_ssize_t rows = c.shape[0]
    cdef Py_ssize_t m = c.shape[1]
    cdef Py_ssize_t r, d
    if m != (<Py_ssize_t> 1) << nbits:
        raise ValueError("row length must equal 2**nbits")
    out_arr = np.zeros((rows, nbits + 1), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    with nogil:
        for r in range(rows):
            for d in range(m):
                out[r, __builtin_popcountll(<unsigned long long> d)] += c[r, d]
    return out_arr
