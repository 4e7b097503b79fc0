# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled temporal unfold/fold kernels.

``unfold_time`` gathers a zero-padded, dilated sliding window along the frame
axis; ``fold_time`` is its exact adjoint (scatter-add).  Both operate on
C-contiguous float64 arrays laid out as (B, C, T, N).  For a fixed
(b, c, k) the valid frames form one contiguous run of T*N values, so each
run is a single memcpy / vector add.
"""
import numpy as np
cimport numpy as cnp
from libc.string cimport memcpy, memset

cnp.import_array()


def unfold_time(double[:, :, :, ::1] x, int kernel, int dilation):
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], T = x.shape[2], N = x.shape[3]
    cdef Py_ssize_t half = kernel // 2
    out_arr = np.empty((B, C, kernel, T, N), dtype=np.float64)
    cdef double[:, :, :, :, ::1] out = out_arr
    cdef double *src
    cdef double *dst
    cdef Py_ssize_t b, c, k, lo, hi, off
    with nogil:
        for b in range(B):
            for c in range(C):
                src = &x[b, c, 0, 0]
                for k in range(kernel):
                    off = (k - half) * dilation
                    lo = -off if off < 0 else 0
                    hi = T - off if off > 0 else T
                    if lo > T:
                        lo = T
                    if hi < 0:
                        hi = 0
                    dst = &out[b, c, k, 0, 0]
                    if hi > lo:
                        memcpy(dst + lo * N, src + (lo + off) * N, (hi - lo) * N * sizeof(double))
                        if lo > 0:
                            memset(dst, 0, lo * N * sizeof(double))
                        if hi < T:
                            memset(dst + hi * N, 0, (T - hi) * N * sizeof(double))
                    else:
                        memset(dst, 0, T * N * sizeof(double))
    return out_arr


def fold_time(double[:, :, :, :, ::1] cols, int dilation):
    cdef Py_ssize_t B = cols.shape[0], C = cols.shape[1], K = cols.shape[2]
    cdef Py_ssize_t T = cols.shape[3], N = cols.shape[4]
    cdef Py_ssize_t half = K // 2
    out_arr = np.zeros((B, C, T, N), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef double *src
    cdef double *dst
    cdef Py_ssize_t b, c, k, i, lo, hi, off, span
    with nogil:
        for b in range(B):
            for c in range(C):
                dst = &out[b, c, 0, 0]
                for k in range(K):
                    off = (k - half) * dilation
                    lo = -off if off < 0 else 0
                    hi = T - off if off > 0 else T
                    if hi <= lo:
                        continue
                    src = &cols[b, c, k, 0, 0] + lo * N
                    span = (hi - lo) * N
                    for i in range(span):
                        dst[(lo + off) * N + i] += src[i]
    return out_arr
