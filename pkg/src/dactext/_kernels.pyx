# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: fused conv/ReLU/max-pool, its sparse backward,
embedding scatter-add and 2x3 Fisher table enumeration.

Signatures match ``_kernels_py`` exactly.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, INFINITY

cnp.import_array()


cdef inline double _dot(const double* a, const double* b, Py_ssize_t n) noexcept nogil:
    cdef double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0
    cdef Py_ssize_t k = 0
    while k + 4 <= n:
        s0 += a[k] * b[k]
        s1 += a[k + 1] * b[k + 1]
        s2 += a[k + 2] * b[k + 2]
        s3 += a[k + 3] * b[k + 3]
        k += 4
    while k < n:
        s0 += a[k] * b[k]
        k += 1
    return (s0 + s1) + (s2 + s3)


def conv_relu_maxpool(x, lengths, kernel, bias):
    cdef double[:, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef cnp.int64_t[::1] lv = np.ascontiguousarray(lengths, dtype=np.int64)
    cdef double[:, :, ::1] kv = np.ascontiguousarray(kernel, dtype=np.float64)
    cdef double[::1] bv = np.ascontiguousarray(bias, dtype=np.float64)
    cdef Py_ssize_t B = xv.shape[0], D = xv.shape[2]
    cdef Py_ssize_t F = kv.shape[0], w = kv.shape[1]
    cdef Py_ssize_t n = w * D
    pooled = np.empty((B, F), dtype=np.float64)
    argmax = np.empty((B, F), dtype=np.int64)
    cdef double[:, ::1] pv = pooled
    cdef cnp.int64_t[:, ::1] av = argmax
    cdef Py_ssize_t b, f, t, T, best_t
    cdef double s, best
    cdef const double* xb
    with nogil:
        for b in range(B):
            T = lv[b] - w + 1
            xb = &xv[b, 0, 0]
            for f in range(F):
                best = -INFINITY
                best_t = 0
                for t in range(T):
                    s = _dot(xb + t * D, &kv[f, 0, 0], n)
                    if s > best:
                        best = s
                        best_t = t
                best += bv[f]
                av[b, f] = best_t
                pv[b, f] = best if best > 0.0 else 0.0
    return pooled, argmax


def conv_maxpool_backward(x, argmax, pooled, gpool, kernel):
    cdef double[:, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef cnp.int64_t[:, ::1] av = np.ascontiguousarray(argmax, dtype=np.int64)
    cdef double[:, ::1] pv = np.ascontiguousarray(pooled, dtype=np.float64)
    cdef double[:, ::1] gv = np.ascontiguousarray(gpool, dtype=np.float64)
    cdef double[:, :, ::1] kv = np.ascontiguousarray(kernel, dtype=np.float64)
    cdef Py_ssize_t B = xv.shape[0], L = xv.shape[1], D = xv.shape[2]
    cdef Py_ssize_t F = kv.shape[0], w = kv.shape[1]
    cdef Py_ssize_t n = w * D
    dx = np.zeros((B, L, D), dtype=np.float64)
    dkernel = np.zeros((F, w, D), dtype=np.float64)
    dbias = np.zeros(F, dtype=np.float64)
    cdef double[:, :, ::1] dxv = dx
    cdef double[:, :, ::1] dkv = dkernel
    cdef double[::1] dbv = dbias
    cdef Py_ssize_t b, f, k
    cdef double g
    cdef const double* xw
    cdef double* dxw
    cdef const double* kf
    cdef double* dkf
    with nogil:
        for b in range(B):
            for f in range(F):
                if pv[b, f] <= 0.0:
                    continue
                g = gv[b, f]
                if g == 0.0:
                    continue
                dbv[f] += g
                xw = &xv[b, av[b, f], 0]
                dxw = &dxv[b, av[b, f], 0]
                kf = &kv[f, 0, 0]
                dkf = &dkv[f, 0, 0]
                for k in range(n):
                    dkf[k] += g * xw[k]
                    dxw[k] += g * kf[k]
    return dx, dkernel, dbias


def scatter_add_rows(out, ids, grads):
    cdef double[:, ::1] ov = out
    cdef cnp.int64_t[::1] iv = np.ascontiguousarray(ids, dtype=np.int64).reshape(-1)
    cdef double[:, ::1] gv = np.ascontiguousarray(grads, dtype=np.float64).reshape(-1, out.shape[1])
    cdef Py_ssize_t i, d, N = iv.shape[0], D = ov.shape[1]
    with nogil:
        for i in range(N):
            for d in range(D):
                ov[iv[i], d] += gv[i, d]


def fisher_2x3_sums(long r0, long c0, long c1, long c2, double logp_obs, double tol, lgam):
    cdef double[::1] lg = np.ascontiguousarray(lgam, dtype=np.float64)
    cdef long n = c0 + c1 + c2
    cdef long r1 = n - r0
    cdef double const = lg[r0] + lg[r1] + lg[c0] + lg[c1] + lg[c2] - lg[n]
    cdef double rel_sum = 0.0, excluded = 0.0, lp
    cdef long a, b, c, lo, hi
    with nogil:
        for a in range(max(0, r0 - c1 - c2), min(r0, c0) + 1):
            lo = max(0, r0 - a - c2)
            hi = min(r0 - a, c1)
            for b in range(lo, hi + 1):
                c = r0 - a - b
                lp = (const - lg[a] - lg[b] - lg[c]
                      - lg[c0 - a] - lg[c1 - b] - lg[c2 - c])
                if lp <= logp_obs + tol:
                    rel_sum += exp(lp - logp_obs)
                else:
                    excluded += exp(lp)
    return rel_sum, excluded
