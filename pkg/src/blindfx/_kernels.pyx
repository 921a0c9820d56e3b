# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the hot kernels. Semantics match ``_kernels_py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()

cdef double CCR_LO = -1.0
cdef double CCR_HI = 1.0


def ccr_eval(points, x):
    cdef const double[::1] p = np.ascontiguousarray(points, dtype=np.float64)
    xa = np.ascontiguousarray(x, dtype=np.float64)
    cdef const double[::1] xv = xa.ravel()
    cdef Py_ssize_t n = p.shape[0]
    cdef Py_ssize_t m = xv.shape[0]
    y_arr = np.empty(m)
    dy_arr = np.empty(m)
    cdef double[::1] y = y_arr
    cdef double[::1] dy = dy_arr
    cdef double h = (CCR_HI - CCR_LO) / (n - 1)
    cdef double pos, u, u2, p0, p1, p2, p3, a, b, c, d, xi
    cdef double slope_lo = (p[1] - p[0]) / h
    cdef double slope_hi = (p[n - 1] - p[n - 2]) / h
    cdef Py_ssize_t i, seg
    for i in range(m):
        xi = xv[i]
        if xi < CCR_LO:
            y[i] = p[0] + (xi - CCR_LO) * slope_lo
            dy[i] = slope_lo
            continue
        if xi > CCR_HI:
            y[i] = p[n - 1] + (xi - CCR_HI) * slope_hi
            dy[i] = slope_hi
            continue
        pos = (xi - CCR_LO) / h
        seg = <Py_ssize_t>floor(pos)
        if seg > n - 2:
            seg = n - 2
        if seg < 0:
            seg = 0
        u = pos - seg
        p1 = p[seg]
        p2 = p[seg + 1]
        p0 = 2.0 * p1 - p2 if seg == 0 else p[seg - 1]
        p3 = 2.0 * p2 - p1 if seg == n - 2 else p[seg + 2]
        a = 2.0 * p1
        b = p2 - p0
        c = 2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3
        d = -p0 + 3.0 * p1 - 3.0 * p2 + p3
        u2 = u * u
        y[i] = 0.5 * (a + b * u + c * u2 + d * u2 * u)
        dy[i] = 0.5 * (b + 2.0 * c * u + 3.0 * d * u2) / h
    return y_arr.reshape(xa.shape), dy_arr.reshape(xa.shape)


def ccr_grad_points(Py_ssize_t n_points, x, g):
    cdef const double[::1] xv = np.ascontiguousarray(x, dtype=np.float64).ravel()
    cdef const double[::1] gv = np.ascontiguousarray(g, dtype=np.float64).ravel()
    cdef Py_ssize_t m = xv.shape[0]
    padded_arr = np.zeros(n_points + 2)
    cdef double[::1] acc = padded_arr
    cdef double h = (CCR_HI - CCR_LO) / (n_points - 1)
    cdef double pos, u, u2, u3, t, gi, xi
    cdef Py_ssize_t i, seg
    for i in range(m):
        xi = xv[i]
        gi = gv[i]
        if xi < CCR_LO:
            t = (xi - CCR_LO) / h
            acc[1] += gi * (1.0 - t)
            acc[2] += gi * t
            continue
        if xi > CCR_HI:
            t = (xi - CCR_HI) / h
            acc[n_points - 1] += -gi * t
            acc[n_points] += gi * (1.0 + t)
            continue
        pos = (xi - CCR_LO) / h
        seg = <Py_ssize_t>floor(pos)
        if seg > n_points - 2:
            seg = n_points - 2
        if seg < 0:
            seg = 0
        u = pos - seg
        u2 = u * u
        u3 = u2 * u
        acc[seg] += gi * 0.5 * (-u + 2.0 * u2 - u3)
        acc[seg + 1] += gi * 0.5 * (2.0 - 5.0 * u2 + 3.0 * u3)
        acc[seg + 2] += gi * 0.5 * (u + 4.0 * u2 - 3.0 * u3)
        acc[seg + 3] += gi * 0.5 * (-u2 + u3)
    out = padded_arr[1:-1].copy()
    out[0] += 2.0 * padded_arr[0]
    out[1] -= padded_arr[0]
    out[n_points - 1] += 2.0 * padded_arr[n_points + 1]
    out[n_points - 2] -= padded_arr[n_points + 1]
    return out


cdef void _gemm(char ta, char tb, int m, int n, int k, double *a, int lda,
                double *b, int ldb, double *c, int ldc) noexcept nogil:
    cdef double one = 1.0
    dgemm(&ta, &tb, &m, &n, &k, &one, a, &lda, b, &ldb, &one, c, &ldc)


def conv1d_valid(x, w, Py_ssize_t dilation):
    # column-major view: out[b]^T (L x O) += xs^T (L x C, ld Lp) @ w_k^T (C x O)
    cdef double[:, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t B = xv.shape[0], C = xv.shape[1], Lp = xv.shape[2]
    cdef Py_ssize_t O = w.shape[0], K = w.shape[2]
    cdef Py_ssize_t L = Lp - dilation * (K - 1)
    out_arr = np.zeros((B, O, L))
    cdef double[:, :, ::1] out = out_arr
    cdef double[:, :, ::1] wk = np.ascontiguousarray(np.moveaxis(w, 2, 0), dtype=np.float64)
    cdef Py_ssize_t b, k
    for k in range(K):
        for b in range(B):
            _gemm(b'N', b'N', L, O, C, &xv[b, 0, k * dilation], Lp,
                  &wk[k, 0, 0], C, &out[b, 0, 0], L)
    return out_arr


def conv1d_grad_input(g, w, Py_ssize_t dilation, Py_ssize_t Lp):
    cdef double[:, :, ::1] gv = np.ascontiguousarray(g, dtype=np.float64)
    cdef Py_ssize_t B = gv.shape[0], O = gv.shape[1], L = gv.shape[2]
    cdef Py_ssize_t C = w.shape[1], K = w.shape[2]
    gx_arr = np.zeros((B, C, Lp))
    cdef double[:, :, ::1] gx = gx_arr
    cdef double[:, :, ::1] wk = np.ascontiguousarray(np.moveaxis(w, 2, 0), dtype=np.float64)
    cdef Py_ssize_t b, k
    for k in range(K):
        for b in range(B):
            _gemm(b'N', b'T', L, C, O, &gv[b, 0, 0], L,
                  &wk[k, 0, 0], C, &gx[b, 0, k * dilation], Lp)
    return gx_arr


def conv1d_grad_weight(g, x, Py_ssize_t K, Py_ssize_t dilation):
    cdef double[:, :, ::1] gv = np.ascontiguousarray(g, dtype=np.float64)
    cdef double[:, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t B = gv.shape[0], O = gv.shape[1], L = gv.shape[2]
    cdef Py_ssize_t C = xv.shape[1], Lp = xv.shape[2]
    gwk_arr = np.zeros((K, O, C))
    cdef double[:, :, ::1] gwk = gwk_arr
    cdef Py_ssize_t b, k
    for k in range(K):
        for b in range(B):
            _gemm(b'T', b'N', C, O, L, &xv[b, 0, k * dilation], Lp,
                  &gv[b, 0, 0], L, &gwk[k, 0, 0], C)
    return np.ascontiguousarray(np.moveaxis(gwk_arr, 0, 2))


def overlap_add(frames, Py_ssize_t hop):
    cdef const double[:, :, ::1] fv = np.ascontiguousarray(frames, dtype=np.float64)
    cdef Py_ssize_t R = fv.shape[0], n = fv.shape[1], F = fv.shape[2]
    out_arr = np.zeros((R, (n - 1) * hop + F))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t r, i, j, base
    for r in range(R):
        for i in range(n):
            base = i * hop
            for j in range(F):
                out[r, base + j] += fv[r, i, j]
    return out_arr
