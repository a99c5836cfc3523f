# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled attention kernels.

Same contracts as the numpy backend (see tierkv.backends): stacked-head dense
attention and index-gathered single-head attention, both returning the
log-sum-exp of the scaled scores. Scores and softmax statistics are computed
in double regardless of the input dtype; outputs are cast back.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log

cnp.import_array()

ctypedef fused real:
    float
    double


def attend_dense(real[:, :, ::1] q, real[:, :, ::1] k, real[:, :, ::1] v,
                 double scale, bint keep_weights):
    """Softmax attention over [H, nq, d] queries and [H, nkv, d] keys/values.

    Returns (output [H, nq, d], lse [H, nq] float64, weights [H, nq, nkv] or
    None). An empty key axis yields zero output and lse = -inf.
    """
    cdef Py_ssize_t H = q.shape[0]
    cdef Py_ssize_t nq = q.shape[1]
    cdef Py_ssize_t d = q.shape[2]
    cdef Py_ssize_t nkv = k.shape[1]
    cdef Py_ssize_t h, i, j, c
    cdef double s, m, z, w

    if real is float:
        dtype = np.float32
    else:
        dtype = np.float64

    out_arr = np.zeros((H, nq, d), dtype=dtype)
    lse_arr = np.full((H, nq), -np.inf, dtype=np.float64)
    weights_arr = np.zeros((H, nq, nkv), dtype=dtype) if keep_weights else None
    if nkv == 0:
        return out_arr, lse_arr, weights_arr

    cdef real[:, :, ::1] out = out_arr
    cdef double[:, ::1] lse = lse_arr
    cdef real[:, :, ::1] wv = weights_arr if keep_weights else None

    scores_arr = np.empty(nkv, dtype=np.float64)
    cdef double[::1] scores = scores_arr
    acc_arr = np.empty(d, dtype=np.float64)
    cdef double[::1] acc = acc_arr

    for h in range(H):
        for i in range(nq):
            m = -np.inf
            for j in range(nkv):
                s = 0.0
                for c in range(d):
                    # double products: float32 cancellation would dominate
                    s += (<double>q[h, i, c]) * (<double>k[h, j, c])
                s *= scale
                scores[j] = s
                if s > m:
                    m = s
            z = 0.0
            for c in range(d):
                acc[c] = 0.0
            for j in range(nkv):
                w = exp(scores[j] - m)
                scores[j] = w
                z += w
                for c in range(d):
                    acc[c] += w * v[h, j, c]
            for c in range(d):
                out[h, i, c] = <real>(acc[c] / z)
            lse[h, i] = m + log(z)
            if keep_weights:
                for j in range(nkv):
                    wv[h, i, j] = <real>(scores[j] / z)

    return out_arr, lse_arr, weights_arr


def attend_indexed(real[:, ::1] q, real[:, ::1] k, real[:, ::1] v,
                   cnp.int64_t[::1] idx, double scale, bint keep_weights):
    """Single-head attention over the key/value rows selected by idx.

    q is [nq, d]; k and v are [M, d] archives gathered through idx without
    materializing copies. Returns (output [nq, d], lse [nq] float64,
    weights [nq, len(idx)] or None).
    """
    cdef Py_ssize_t nq = q.shape[0]
    cdef Py_ssize_t d = q.shape[1]
    cdef Py_ssize_t n = idx.shape[0]
    cdef Py_ssize_t i, j, c
    cdef cnp.int64_t jj
    cdef double s, m, z, w

    if real is float:
        dtype = np.float32
    else:
        dtype = np.float64

    out_arr = np.zeros((nq, d), dtype=dtype)
    lse_arr = np.full(nq, -np.inf, dtype=np.float64)
    weights_arr = np.zeros((nq, n), dtype=dtype) if keep_weights else None
    if n == 0:
        return out_arr, lse_arr, weights_arr

    cdef real[:, ::1] out = out_arr
    cdef double[::1] lse = lse_arr
    cdef real[:, ::1] wv = weights_arr if keep_weights else None

    scores_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] scores = scores_arr
    acc_arr = np.empty(d, dtype=np.float64)
    cdef double[::1] acc = acc_arr

    for i in range(nq):
        m = -np.inf
        for j in range(n):
            jj = idx[j]
            s = 0.0
            for c in range(d):
                s += (<double>q[i, c]) * (<double>k[jj, c])
            s *= scale
            scores[j] = s
            if s > m:
                m = s
        z = 0.0
        for c in range(d):
            acc[c] = 0.0
        for j in range(n):
            w = exp(scores[j] - m)
            scores[j] = w
            z += w
            jj = idx[j]
            for c in range(d):
                acc[c] += w * v[jj, c]
        for c in range(d):
            out[i, c] = <real>(acc[c] / z)
        lse[i] = m + log(z)
        if keep_weights:
            for j in range(n):
                wv[i, j] = <real>(scores[j] / z)

    return out_arr, lse_arr, weights_arr
