# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled recurrent scan, the fast backend.

Same contract as numpy_scan: gate blocks [i | f | c~ | o] on the 4H axis,
caller owns the input-projection GEMM, ReLU derivative is 0 at exactly 0.
The recurrent matmuls go through BLAS dgemm; the gate nonlinearities and
state updates are fused into single passes over the batch.
"""

import numpy as np

from libc.math cimport exp
from scipy.linalg.cython_blas cimport dgemm

name = "cython"

cdef char *TRANS_N = b"N"
cdef char *TRANS_T = b"T"


cdef inline double _sig(double z) noexcept nogil:
    cdef double e
    if z >= 0.0:
        return 1.0 / (1.0 + exp(-z))
    e = exp(z)
    return e / (1.0 + e)


def scan_forward(double[:, :, ::1] x_proj, double[:, ::1] wh):
    """See numpy_scan.scan_forward: returns (hseq, cseq, gates)."""
    cdef Py_ssize_t m = x_proj.shape[0]
    cdef Py_ssize_t steps = x_proj.shape[1]
    cdef Py_ssize_t four_h = x_proj.shape[2]
    cdef Py_ssize_t hidden = four_h // 4

    hseq_arr = np.empty((m, steps, hidden))
    cseq_arr = np.empty((m, steps, hidden))
    gates_arr = np.empty((m, steps, four_h))
    cdef double[:, :, ::1] hseq = hseq_arr
    cdef double[:, :, ::1] cseq = cseq_arr
    cdef double[:, :, ::1] gates = gates_arr

    cdef double[:, ::1] h = np.zeros((m, hidden))
    cdef double[:, ::1] c = np.zeros((m, hidden))
    cdef double[:, ::1] z = np.empty((m, four_h))

    cdef int bm = <int> four_h
    cdef int bn = <int> m
    cdef int bk = <int> hidden
    cdef int lda = <int> four_h
    cdef int ldb = <int> hidden
    cdef int ldc = <int> four_h
    cdef double one = 1.0
    cdef double zero = 0.0

    cdef Py_ssize_t t, i, j
    cdef double zi, zf, zc, zo, gi, gf, gc, go, cc, hh

    for t in range(steps):
        if m > 0:
            # z = h @ wh, column-major view of the row-major buffers
            dgemm(TRANS_N, TRANS_N, &bm, &bn, &bk, &one,
                  &wh[0, 0], &lda, &h[0, 0], &ldb, &zero, &z[0, 0], &ldc)
        with nogil:
            for i in range(m):
                for j in range(hidden):
                    zi = z[i, j] + x_proj[i, t, j]
                    zf = z[i, hidden + j] + x_proj[i, t, hidden + j]
                    zc = z[i, 2 * hidden + j] + x_proj[i, t, 2 * hidden + j]
                    zo = z[i, 3 * hidden + j] + x_proj[i, t, 3 * hidden + j]
                    gi = _sig(zi)
                    gf = _sig(zf)
                    gc = zc if zc > 0.0 else 0.0
                    go = _sig(zo)
                    cc = gf * c[i, j] + gi * gc
                    hh = go * (cc if cc > 0.0 else 0.0)
                    c[i, j] = cc
                    h[i, j] = hh
                    gates[i, t, j] = gi
                    gates[i, t, hidden + j] = gf
                    gates[i, t, 2 * hidden + j] = gc
                    gates[i, t, 3 * hidden + j] = go
                    cseq[i, t, j] = cc
                    hseq[i, t, j] = hh
    return hseq_arr, cseq_arr, gates_arr


def scan_backward(double[:, ::1] wh, double[:, :, ::1] gates,
                  double[:, :, ::1] cseq, double[:, :, ::1] dhseq):
    """See numpy_scan.scan_backward: returns dz (m, T, 4H)."""
    cdef Py_ssize_t m = dhseq.shape[0]
    cdef Py_ssize_t steps = dhseq.shape[1]
    cdef Py_ssize_t hidden = dhseq.shape[2]
    cdef Py_ssize_t four_h = 4 * hidden

    dz_arr = np.empty((m, steps, four_h))
    cdef double[:, :, ::1] dz = dz_arr
    cdef double[:, ::1] dh_rec = np.zeros((m, hidden))
    cdef double[:, ::1] dcv = np.zeros((m, hidden))

    cdef int bm = <int> hidden
    cdef int bn = <int> m
    cdef int bk = <int> four_h
    cdef int lda = <int> four_h
    cdef int ldb = <int> (steps * four_h)
    cdef int ldc = <int> hidden
    cdef double one = 1.0
    cdef double zero = 0.0

    cdef Py_ssize_t t, i, j
    cdef double gi, gf, gc, go, cc, c_prev, dh, do, dc

    for t in range(steps - 1, -1, -1):
        with nogil:
            for i in range(m):
                for j in range(hidden):
                    gi = gates[i, t, j]
                    gf = gates[i, t, hidden + j]
                    gc = gates[i, t, 2 * hidden + j]
                    go = gates[i, t, 3 * hidden + j]
                    cc = cseq[i, t, j]
                    c_prev = cseq[i, t - 1, j] if t > 0 else 0.0
                    dh = dhseq[i, t, j] + dh_rec[i, j]
                    do = dh * (cc if cc > 0.0 else 0.0)
                    dc = dcv[i, j] + (dh * go if cc > 0.0 else 0.0)
                    dz[i, t, j] = dc * gc * gi * (1.0 - gi)
                    dz[i, t, hidden + j] = dc * c_prev * gf * (1.0 - gf)
                    dz[i, t, 2 * hidden + j] = dc * gi if gc > 0.0 else 0.0
                    dz[i, t, 3 * hidden + j] = do * go * (1.0 - go)
                    dcv[i, j] = dc * gf
        if m > 0:
            # dh_rec = dz[:, t, :] @ wh.T; the strided time slice enters
            # dgemm directly via its leading dimension
            dgemm(TRANS_T, TRANS_N, &bm, &bn, &bk, &one,
                  &wh[0, 0], &lda, &dz[0, t, 0], &ldb, &zero,
                  &dh_rec[0, 0], &ldc)
    return dz_arr
