# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: synthetic embedding hash and batched bilinear
attention fusion (forward and backward).

Pairs are processed independently and may run on several OpenMP threads;
each pair writes only its own output slices, so results do not depend on
the thread count.
"""

import numpy as np
cimport numpy as cnp
from cython.parallel import prange
from libc.math cimport exp
from libc.stdlib cimport free, malloc
from libc.stdint cimport uint64_t, int64_t

cnp.import_array()

BACKEND = "cython"

cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL


cdef inline uint64_t _mix(uint64_t z) noexcept nogil:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


def synth_rows(token_ids, Py_ssize_t dim, seed):
    cdef int64_t[::1] ids = np.ascontiguousarray(token_ids, dtype=np.int64)
    cdef Py_ssize_t n = ids.shape[0]
    out_arr = np.empty((n, dim), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef uint64_t s = <uint64_t>(int(seed) & 0xFFFFFFFFFFFFFFFF)
    cdef uint64_t key, v
    cdef Py_ssize_t i, j
    cdef double scale = 1.0 / 9007199254740992.0
    with nogil:
        for i in range(n):
            key = _mix(_mix(s + GOLDEN * (<uint64_t>ids[i] + 1)) + GOLDEN * (<uint64_t>(i + 1)))
            for j in range(dim):
                v = _mix(key + GOLDEN * (<uint64_t>(j + 1)))
                out[i, j] = 2.0 * (<double>(v >> 11) * scale) - 1.0
    return out_arr


cdef inline double _dot(const double* x, const double* y, Py_ssize_t n) noexcept nogil:
    # four independent partial sums so the compiler can vectorise
    cdef double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0
    cdef Py_ssize_t k = 0
    while k + 4 <= n:
        s0 = s0 + x[k] * y[k]
        s1 = s1 + x[k + 1] * y[k + 1]
        s2 = s2 + x[k + 2] * y[k + 2]
        s3 = s3 + x[k + 3] * y[k + 3]
        k = k + 4
    while k < n:
        s0 = s0 + x[k] * y[k]
        k = k + 1
    return (s0 + s1) + (s2 + s3)


cdef void _pair_forward(const double[:, ::1] D, const double[:, ::1] T,
                        Py_ssize_t ds, Py_ssize_t nd, Py_ssize_t ts, Py_ssize_t nt,
                        Py_ssize_t c0, Py_ssize_t r, bint flat,
                        double* A, double* f) noexcept nogil:
    cdef Py_ssize_t i, j, c
    cdef double acc, m, z, a
    cdef const double* Di
    cdef const double* Tj
    cdef double* tmp = <double*>malloc(r * sizeof(double))
    for i in range(nd):
        Di = &D[ds + i, c0]
        for j in range(nt):
            Tj = &T[ts + j, c0]
            A[i * nt + j] = _dot(Di, Tj, r)
    if flat:
        _softmax(A, 1, nd * nt)
    else:
        _softmax(A, nd, nt)
    for c in range(r):
        f[c] = 0.0
    for i in range(nd):
        for c in range(r):
            tmp[c] = 0.0
        for j in range(nt):
            a = A[i * nt + j]
            Tj = &T[ts + j, c0]
            for c in range(r):
                tmp[c] = tmp[c] + a * Tj[c]
        Di = &D[ds + i, c0]
        for c in range(r):
            f[c] = f[c] + Di[c] * tmp[c]
    free(tmp)


cdef inline void _softmax(double* X, Py_ssize_t rows, Py_ssize_t cols) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef double m, z
    cdef double* x
    for i in range(rows):
        x = &X[i * cols]
        m = x[0]
        for j in range(1, cols):
            if x[j] > m:
                m = x[j]
        z = 0.0
        for j in range(cols):
            x[j] = exp(x[j] - m)
            z = z + x[j]
        for j in range(cols):
            x[j] = x[j] / z


def ban_forward(D_in, T_in, d_off_in, t_off_in, Py_ssize_t glimpses, bint flat):
    cdef const double[:, ::1] D = np.ascontiguousarray(D_in, dtype=np.float64)
    cdef const double[:, ::1] T = np.ascontiguousarray(T_in, dtype=np.float64)
    cdef const int64_t[::1] d_off = np.ascontiguousarray(d_off_in, dtype=np.int64)
    cdef const int64_t[::1] t_off = np.ascontiguousarray(t_off_in, dtype=np.int64)
    cdef Py_ssize_t n_pairs = d_off.shape[0] - 1
    cdef Py_ssize_t width = D.shape[1]
    cdef Py_ssize_t r = width // glimpses
    a_off_arr = np.zeros(n_pairs + 1, dtype=np.int64)
    cdef int64_t[::1] a_off = a_off_arr
    cdef Py_ssize_t b, g, nd, nt
    for b in range(n_pairs):
        nd = d_off[b + 1] - d_off[b]
        nt = t_off[b + 1] - t_off[b]
        a_off[b + 1] = a_off[b] + glimpses * nd * nt
    A_arr = np.empty(a_off[n_pairs], dtype=np.float64)
    f_arr = np.empty((n_pairs, width), dtype=np.float64)
    cdef double[::1] A = A_arr
    cdef double[:, ::1] f = f_arr
    cdef int nthreads = _threads()
    if A.shape[0] == 0:
        return f_arr, A_arr, a_off_arr
    for b in prange(n_pairs, nogil=True, schedule="static", num_threads=nthreads):
        for g in range(glimpses):
            _pair_forward(D, T, d_off[b], d_off[b + 1] - d_off[b],
                          t_off[b], t_off[b + 1] - t_off[b], g * r, r, flat,
                          &A[a_off[b] + g * (d_off[b + 1] - d_off[b]) * (t_off[b + 1] - t_off[b])],
                          &f[b, g * r])
    return f_arr, A_arr, a_off_arr


cdef void _pair_backward(const double[:, ::1] D, const double[:, ::1] T,
                         Py_ssize_t ds, Py_ssize_t nd, Py_ssize_t ts, Py_ssize_t nt,
                         Py_ssize_t c0, Py_ssize_t r, bint flat,
                         const double* A, const double* df,
                         double[:, ::1] dD, double[:, ::1] dT, double* dS) noexcept nogil:
    cdef Py_ssize_t i, j, c, rows, cols
    cdef double acc, tot, a
    cdef const double* Di
    cdef const double* Tj
    cdef double* dTj
    cdef double* dDi
    cdef double* dM = <double*>malloc(nd * r * sizeof(double))
    cdef double* tmp = <double*>malloc(r * sizeof(double))
    # dM = df * D (the gradient reaching A T); dA[i, j] = dM_i . T_j
    for i in range(nd):
        Di = &D[ds + i, c0]
        for c in range(r):
            dM[i * r + c] = df[c] * Di[c]
    for i in range(nd):
        for j in range(nt):
            Tj = &T[ts + j, c0]
            dS[i * nt + j] = _dot(&dM[i * r], Tj, r)
    # dD += df * (A T); dT += A^T dM
    for i in range(nd):
        for c in range(r):
            tmp[c] = 0.0
        for j in range(nt):
            a = A[i * nt + j]
            Tj = &T[ts + j, c0]
            dTj = &dT[ts + j, c0]
            for c in range(r):
                tmp[c] = tmp[c] + a * Tj[c]
                dTj[c] += a * dM[i * r + c]
        dDi = &dD[ds + i, c0]
        for c in range(r):
            dDi[c] += df[c] * tmp[c]
    # softmax backward, in place in dS
    if flat:
        rows = 1
        cols = nd * nt
    else:
        rows = nd
        cols = nt
    for i in range(rows):
        tot = 0.0
        for j in range(cols):
            tot = tot + A[i * cols + j] * dS[i * cols + j]
        for j in range(cols):
            dS[i * cols + j] = A[i * cols + j] * (dS[i * cols + j] - tot)
    # dD += dS T; dT += dS^T D
    for i in range(nd):
        Di = &D[ds + i, c0]
        dDi = &dD[ds + i, c0]
        for j in range(nt):
            a = dS[i * nt + j]
            Tj = &T[ts + j, c0]
            dTj = &dT[ts + j, c0]
            for c in range(r):
                dDi[c] += a * Tj[c]
                dTj[c] += a * Di[c]
    free(dM)
    free(tmp)


def ban_backward(D_in, T_in, d_off_in, t_off_in, Py_ssize_t glimpses, bint flat,
                 A_in, a_off_in, df_in):
    cdef const double[:, ::1] D = np.ascontiguousarray(D_in, dtype=np.float64)
    cdef const double[:, ::1] T = np.ascontiguousarray(T_in, dtype=np.float64)
    cdef const int64_t[::1] d_off = np.ascontiguousarray(d_off_in, dtype=np.int64)
    cdef const int64_t[::1] t_off = np.ascontiguousarray(t_off_in, dtype=np.int64)
    cdef const double[::1] A = np.ascontiguousarray(A_in, dtype=np.float64)
    cdef const int64_t[::1] a_off = np.ascontiguousarray(a_off_in, dtype=np.int64)
    cdef const double[:, ::1] df = np.ascontiguousarray(df_in, dtype=np.float64)
    cdef Py_ssize_t n_pairs = d_off.shape[0] - 1
    cdef Py_ssize_t r = D.shape[1] // glimpses
    dD_arr = np.zeros((D.shape[0], D.shape[1]), dtype=np.float64)
    dT_arr = np.zeros((T.shape[0], T.shape[1]), dtype=np.float64)
    cdef double[:, ::1] dD = dD_arr
    cdef double[:, ::1] dT = dT_arr
    # scratch for dS, laid out like A
    scratch_arr = np.empty(max(A.shape[0], 1), dtype=np.float64)
    cdef double[::1] scratch = scratch_arr
    cdef Py_ssize_t b, g, nd, nt
    cdef int nthreads = _threads()
    if A.shape[0] == 0:
        return dD_arr, dT_arr
    for b in prange(n_pairs, nogil=True, schedule="static", num_threads=nthreads):
        for g in range(glimpses):
            _pair_backward(D, T, d_off[b], d_off[b + 1] - d_off[b],
                           t_off[b], t_off[b + 1] - t_off[b], g * r, r, flat,
                           &A[a_off[b] + g * (d_off[b + 1] - d_off[b]) * (t_off[b + 1] - t_off[b])],
                           &df[b, g * r], dD, dT,
                           &scratch[a_off[b] + g * (d_off[b + 1] - d_off[b]) * (t_off[b + 1] - t_off[b])])
    return dD_arr, dT_arr


cdef int _threads():
    import os
    value = os.environ.get("SABAN_THREADS", "1")
    try:
        n = int(value)
    except ValueError:
        n = 1
    return n if n >= 1 else 1
